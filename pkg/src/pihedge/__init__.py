"""pihedge: imitation-based stock path simulation and option hedging.

The pipeline has four stages, mirrored by the CLI subcommands:

1. market_data: OHLCV bars -> per-day episodes -> (decision, price change) samples
2. bdnn: Bayesian MLP regression of price change on the decision
3. vhmn: visible-hidden Markov network imitating successive decision making
4. paths + hedging: Monte Carlo price paths and backward-recursive learning
   of hedge positions and the option price
"""

__version__ = "0.1.0"
