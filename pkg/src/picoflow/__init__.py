"""picoflow: instrument-to-HPC data flow orchestration at desk scale.

Subsystems:

- :mod:`picoflow.emdlite`   byte-exact container codec for microscopy tensors
- :mod:`picoflow.analysis`  projections, dtype casting, blob detection, rendering
- :mod:`picoflow.flowcore`  flow state machine, backoff policy, timing accounting
- :mod:`picoflow.watcher`   directory monitor with crash-safe checkpoint journal
- :mod:`picoflow.transferd` checksummed HTTP file transfer (server + client)
- :mod:`picoflow.computed`  simulated batch compute endpoint (server + client)
- :mod:`picoflow.catalogd`  searchable metadata catalog with visibility filtering
- :mod:`picoflow.bench`     synthetic load generator and metrics aggregation
- :mod:`picoflow.cli`       single entry point for services and utilities
"""

__version__ = "0.1.0"
