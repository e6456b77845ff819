from bunca.cli import main

main()
