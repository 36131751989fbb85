"""Services, scenario harness and command-line interface."""
