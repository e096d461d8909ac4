# Command handlers, one module per group of sub-commands
