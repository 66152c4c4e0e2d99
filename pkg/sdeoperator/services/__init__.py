# Experiment orchestration services
