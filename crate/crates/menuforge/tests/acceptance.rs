//! End-to-end acceptance checks. Populated as the corresponding modules land.
