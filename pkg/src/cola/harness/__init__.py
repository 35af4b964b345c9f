"""Command line front end, configuration, sweeps and reports."""
