"""Batch command-line front end: fit models, simulate paths, price options.

Subcommands: fit-bdnn, fit-vhmn, simulate, price. Every output directory gets
delimited data plus rendered figures, with JSON sidecars carrying seeds and
config hashes so reruns are reproducible byte for byte.

Exit codes: 0 success, 1 computational failure, 2 usage or IO error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, bdnn, figures, hedging, market_data, paths, vhmn
from .config import PipelineConfig, load_config
from .data import fixture_path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_episodes(config: PipelineConfig, selection: list[int] | None):
    csv_path = Path(config.data.csv) if config.data.csv else fixture_path()
    if not csv_path.exists():
        raise FileNotFoundError(f"input CSV not found: {csv_path}")
    episodes = market_data.load_ohlcv_csv(csv_path, config.data.column_mapping())
    if not episodes:
        raise market_data.MarketDataError(f"no bars found in {csv_path}")
    if selection is None:
        return list(enumerate(episodes))
    picked = []
    for idx in selection:
        if idx < 0 or idx >= len(episodes):
            raise IndexError(f"episode index {idx} out of range (have {len(episodes)})")
        picked.append((idx, episodes[idx]))
    return picked


def _episode_inputs(config: PipelineConfig, episode: market_data.Episode):
    bars = market_data.episode_bars(episode, config.data.drop_first_slot)
    samples = tuple(
        market_data.DecisionSample(
            d=market_data.quantize_decision(bar), g=market_data.price_change(bar)
        )
        for bar in bars
    )
    return bars, samples


def _dump_dataset(out_dir: Path, idx: int, samples) -> Path:
    path = out_dir / f"dataset_ep{idx:02d}.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        market_data.dump_dataset_csv(samples, fh)
    return path


def cmd_fit_bdnn(config: PipelineConfig, selection, out_dir: Path) -> int:
    cfg = config.bdnn
    train_config = bdnn.TrainConfig(
        lam=cfg.lam,
        sigma=cfg.sigma,
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size or None,
        rng_seed=cfg.seed,
        standardize=cfg.standardize,
    )
    metrics = {}
    for idx, episode in _load_episodes(config, selection):
        _, samples = _episode_inputs(config, episode)
        _dump_dataset(out_dir, idx, samples)
        model = bdnn.train_map(samples, train_config, architecture=cfg.architecture)
        posterior = bdnn.laplace_posterior(model, samples, cfg.lam)
        model_path = out_dir / f"bdnn_ep{idx:02d}.json"
        bdnn.save_model(model_path, model, posterior, cfg.lam, cfg.sigma)

        d = np.array([s.d for s in samples])
        g = np.array([s.g for s in samples])
        means, variances = bdnn.predictive_batch(posterior, model, cfg.sigma, d)
        stds = np.sqrt(variances)
        coverage = float(np.mean(np.abs(g - means) <= stds))
        metrics[f"episode_{idx:02d}"] = {
            "label": episode.label,
            "final_loss": bdnn.loss(model, samples, cfg.lam),
            "one_sigma_coverage": coverage,
            "samples": len(samples),
        }
        print(f"fit-bdnn episode {idx} ({episode.label}): "
              f"loss={metrics[f'episode_{idx:02d}']['final_loss']:.6g} "
              f"coverage={coverage:.3f}")

        if config.output.figures:
            grid = np.linspace(d.min(), d.max(), 200)
            grid_means, grid_vars = bdnn.predictive_batch(posterior, model, cfg.sigma, grid)
            figures.regression_figure(
                out_dir / f"bdnn_fit_ep{idx:02d}.png",
                d, g, grid, grid_means, np.sqrt(grid_vars),
                title=f"episode {episode.label}",
            )
    _write_json(out_dir / "bdnn_metrics.json", {
        "config_hash": config.hash(), "version": __version__, "episodes": metrics,
    })
    return 0


def cmd_fit_vhmn(config: PipelineConfig, selection, out_dir: Path) -> int:
    cfg = config.vhmn
    metrics = {}
    for idx, episode in _load_episodes(config, selection):
        bars, samples = _episode_inputs(config, episode)
        _dump_dataset(out_dir, idx, samples)
        opens = [bar.open for bar in bars]
        decisions = [s.d for s in samples]
        seq, vis_q, obs_q = vhmn.quantize_sequences(
            opens, decisions, cfg.visible_bins, cfg.observation_bins
        )
        result = vhmn.fit(
            seq,
            dims=(cfg.hidden_states, cfg.visible_bins, cfg.observation_bins),
            alpha_dir=cfg.alpha_dir,
            rng_seed=cfg.seed + idx,
            max_iters=cfg.max_iters,
            tol=cfg.tol,
            restarts=cfg.restarts,
        )
        vhmn.save_vhmn(out_dir / f"vhmn_ep{idx:02d}.json", result.params, vis_q, obs_q)
        trace_path = out_dir / f"vhmn_trace_ep{idx:02d}.csv"
        with open(trace_path, "w", encoding="utf-8") as fh:
            fh.write("iteration,log_likelihood\n")
            for it, value in enumerate(result.trace):
                fh.write(f"{it},{value!r}\n")
        metrics[f"episode_{idx:02d}"] = {
            "label": episode.label,
            "final_log_likelihood": result.trace[-1],
            "iterations": len(result.trace),
            "restart_log_likelihoods": result.restart_log_likelihoods,
        }
        print(f"fit-vhmn episode {idx} ({episode.label}): "
              f"loglik={result.trace[-1]:.4f} iters={len(result.trace)}")
        if config.output.figures:
            figures.trace_figure(
                out_dir / f"vhmn_trace_ep{idx:02d}.png",
                result.trace,
                title=f"episode {episode.label}",
            )
    _write_json(out_dir / "vhmn_metrics.json", {
        "config_hash": config.hash(), "version": __version__, "episodes": metrics,
    })
    return 0


def _simulate_episode(config: PipelineConfig, idx: int, episode, out_dir: Path):
    """Price/state matrices for one episode from its fitted model files."""
    sim = config.simulate
    bdnn_path = out_dir / f"bdnn_ep{idx:02d}.json"
    vhmn_path = out_dir / f"vhmn_ep{idx:02d}.json"
    for path in (bdnn_path, vhmn_path):
        if not path.exists():
            raise FileNotFoundError(f"model file not found (fit first): {path}")
    model, _, _, _ = bdnn.load_model(bdnn_path)
    params, _, obs_q = vhmn.load_vhmn(vhmn_path)

    bars, samples = _episode_inputs(config, episode)
    horizon = sim.horizon or len(samples)
    s0 = sim.s0 or bars[0].open
    decisions = paths.simulate_decisions(
        params, obs_q, sim.paths, horizon, rng_seed=sim.seed + idx
    )
    prices = paths.decision_matrix_to_prices(model, decisions, s0)
    states = paths.remove_drift(prices, sim.mu, sim.sigma_s)
    sidecar = {
        "episode": episode.label,
        "s0": s0,
        "mu": sim.mu,
        "sigma_s": sim.sigma_s,
        "seed": sim.seed + idx,
        "paths": sim.paths,
        "horizon": horizon,
        "model_hashes": {"bdnn": _sha256(bdnn_path), "vhmn": _sha256(vhmn_path)},
        "config_hash": config.hash(),
        "version": __version__,
    }
    return prices, states, sidecar


def cmd_simulate(config: PipelineConfig, selection, out_dir: Path) -> int:
    for idx, episode in _load_episodes(config, selection):
        prices, states, sidecar = _simulate_episode(config, idx, episode, out_dir)
        paths.write_path_matrix(out_dir / f"paths_prices_ep{idx:02d}.csv", prices, sidecar)
        paths.write_path_matrix(out_dir / f"paths_states_ep{idx:02d}.csv", states, sidecar)
        print(f"simulate episode {idx} ({episode.label}): "
              f"{prices.shape[0]} paths x {prices.shape[1]} slots")
        if config.output.figures:
            figures.paths_figure(
                out_dir / f"paths_ep{idx:02d}.png", prices,
                title=f"simulated prices, episode {episode.label}",
            )
    return 0


def _option_spec(config: PipelineConfig, n_steps: int) -> hedging.OptionSpec:
    opt = config.option
    return hedging.OptionSpec(
        kind=opt.kind,
        strike=opt.strike,
        maturity_slots=opt.maturity_slots or n_steps,
        shares=opt.shares,
        rate_per_slot=opt.rate_per_slot(),
        eta=opt.eta,
        pure_risk_hedge=opt.pure_risk_hedge,
        kappa=opt.kappa,
        drift_mu=config.simulate.mu,
        vol_sigma=config.simulate.sigma_s,
        ridge=opt.ridge,
    )


def cmd_price(
    config: PipelineConfig,
    selection,
    out_dir: Path,
    use_gbm: bool,
    paths_file: str | None,
) -> int:
    sim = config.simulate
    if use_gbm:
        horizon = config.option.maturity_slots or sim.horizon or 24
        s0 = sim.s0 or config.option.strike
        prices = paths.gbm_paths(
            s0, sim.mu, sim.sigma_s, horizon, sim.paths, rng_seed=sim.seed
        )
        source = {"kind": "gbm", "s0": s0, "mu": sim.mu, "sigma_s": sim.sigma_s,
                  "paths": sim.paths, "seed": sim.seed}
    elif paths_file is not None:
        matrix_path = Path(paths_file)
        if not matrix_path.exists():
            raise FileNotFoundError(f"path matrix not found: {matrix_path}")
        prices = paths.read_path_matrix(matrix_path)
        source = {"kind": "file", "path": str(matrix_path), "hash": _sha256(matrix_path)}
    else:
        pairs = _load_episodes(config, selection)
        idx, episode = pairs[0]
        prices, _, sidecar = _simulate_episode(config, idx, episode, out_dir)
        source = {"kind": "episode", **sidecar}

    spec = _option_spec(config, prices.shape[1] - 1)
    impact_model = None
    if spec.kappa != 0.0:
        pairs = _load_episodes(config, selection)
        idx = pairs[0][0]
        bdnn_path = out_dir / f"bdnn_ep{idx:02d}.json"
        if not bdnn_path.exists():
            raise FileNotFoundError(f"kappa > 0 needs a fitted model: {bdnn_path}")
        impact_model, _, _, _ = bdnn.load_model(bdnn_path)

    cross_section = hedging.CrossSection.from_prices(prices, spec)
    solution = hedging.price_and_hedge(
        cross_section, spec, basis_count=config.option.basis_count,
        impact_model=impact_model,
    )

    q0 = solution.q[:, 0]
    report = {
        "price_per_share": solution.price,
        "price_total": solution.price_total,
        "q0_mean": float(q0.mean()),
        "q0_std_error": float(q0.std(ddof=1) / np.sqrt(q0.size)),
        "option": {
            "kind": spec.kind, "strike": spec.strike, "shares": spec.shares,
            "maturity_slots": spec.maturity_slots, "rate_per_slot": spec.rate_per_slot,
        },
        "risk": {
            "eta": spec.eta,
            "pure_risk_hedge": spec.pure_risk_hedge,
            "kappa": spec.kappa,
            "ridge": spec.ridge,
            "basis_count": config.option.basis_count,
        },
        "source": source,
        "config_hash": config.hash(),
        "version": __version__,
    }
    _write_json(out_dir / "price_report.json", report)
    for name, matrix in (
        ("hedge_positions", solution.a),
        ("portfolio_values", solution.pi),
        ("q_values", solution.q),
    ):
        paths.write_path_matrix(out_dir / f"{name}.csv", matrix, report)
    print(f"price: {solution.price:.6f} USD/share "
          f"({solution.price_total:.2f} USD on {spec.shares:g} shares), "
          f"eta={spec.eta} pure_risk_hedge={spec.pure_risk_hedge}")
    if config.output.figures:
        figures.hedge_figures(out_dir, "hedge", solution.a, solution.pi, solution.q)
    return 0


def _parse_episodes(raw: str | None) -> list[int] | None:
    if raw is None:
        return None
    try:
        return [int(part) for part in raw.split(",") if part.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad episode list {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pihedge",
        description="Imitate investor decisions, simulate prices, and learn option hedges.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--data", help="input OHLCV CSV (overrides config)")
        p.add_argument("--out", help="output directory (default from config)")
        p.add_argument("--seed", type=int, help="override all stage seeds")
        p.add_argument("--episodes", help="comma-separated episode indices, e.g. 0,2")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    for name in ("fit-bdnn", "fit-vhmn", "simulate"):
        common(sub.add_parser(name))

    price = sub.add_parser("price")
    common(price)
    price.add_argument("--gbm", action="store_true",
                       help="price on oracle GBM paths instead of fitted models")
    price.add_argument("--paths-file", help="price on a stored path matrix CSV")
    price.add_argument("--paths", type=int, help="number of simulated paths")
    price.add_argument("--eta", type=float, help="risk-aversion coefficient")
    price.add_argument("--pure-risk-hedge", action="store_true",
                       help="variance-only action solve (1/eta = 0 limit)")
    price.add_argument("--kappa", type=float, help="hedging-impact compensation scale")
    return parser


def _apply_overrides(config: PipelineConfig, args: argparse.Namespace) -> None:
    if args.data:
        config.data.csv = args.data
    if args.out:
        config.output.directory = args.out
    if args.seed is not None:
        config.bdnn.seed = args.seed
        config.vhmn.seed = args.seed
        config.simulate.seed = args.seed
    if args.no_figures:
        config.output.figures = False
    if getattr(args, "paths", None) is not None:
        config.simulate.paths = args.paths
    if getattr(args, "eta", None) is not None:
        config.option.eta = args.eta
    if getattr(args, "pure_risk_hedge", False):
        config.option.pure_risk_hedge = True
    if getattr(args, "kappa", None) is not None:
        config.option.kappa = args.kappa


USAGE_ERRORS = (
    FileNotFoundError,
    IndexError,
    IsADirectoryError,
    PermissionError,
    market_data.MarketDataError,
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        _apply_overrides(config, args)
        selection = _parse_episodes(args.episodes)
        out_dir = Path(config.output.directory)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "fit-bdnn":
            return cmd_fit_bdnn(config, selection, out_dir)
        if args.command == "fit-vhmn":
            return cmd_fit_vhmn(config, selection, out_dir)
        if args.command == "simulate":
            return cmd_simulate(config, selection, out_dir)
        return cmd_price(config, selection, out_dir, args.gbm, args.paths_file)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
