# Orchestrator module
