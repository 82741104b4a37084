"""Treatment-planning simulator for percutaneous tumour ablation.

Voxel-phantom simulation of RFA, MWA, cryoablation and IRE: a clinical
domain model with combination validation, a protocol mini-language, an XML
simulation-definition format, finite-difference biophysics solvers, lesion
comparison metrics, a job orchestration service and a CLI.
"""

__version__ = "0.1.0"
