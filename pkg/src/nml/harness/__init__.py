"""Configuration, datasets, persistence and the command line tool."""
