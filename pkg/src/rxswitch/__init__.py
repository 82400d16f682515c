"""rxswitch: medication-switch mining from longitudinal prescription records
and clinical notes: switch detection, LLM-based reason extraction with a
deterministic mock provider, classical baselines, reason topic clustering,
and demographic enrichment scoring."""

__version__ = "0.1.0"
