from dampwave.main import main

raise SystemExit(main())
