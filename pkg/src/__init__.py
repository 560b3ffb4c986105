# Two-hop diffusion-based molecular communication with amplify-and-forward relaying
#
# Modules: channel (diffusion and observation model), protocols (detection, relay gains),
# analysis (semi-analytic error probability), simulator (particle-based Monte Carlo),
# figures / cli (experiment runner). Run with `python -m src`.
