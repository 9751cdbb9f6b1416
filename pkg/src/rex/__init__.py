"""Campaign runner for exploit generation against vulnerable Solidity
contracts: source transforms, generation backends, a Foundry harness,
and outcome analytics."""

__version__ = "0.1.0"
