"""Private-yet-verifiable contact tracing."""
