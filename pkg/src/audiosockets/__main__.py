from .appcli import main

main()
