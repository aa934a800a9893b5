"""Federated RL with behavioral-metric state encoders (FedRAG) and an exact tabular oracle."""
