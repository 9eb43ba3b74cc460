from .appio import main

main()
