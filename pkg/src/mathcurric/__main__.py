from mathcurric.cli import main

raise SystemExit(main())
