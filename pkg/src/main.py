"""
Subband SysID Main Entry Point

Command-line harness for subband system identification:

    identify        run the full pipeline and write the report and artifacts
    train-detector  train the dependency detector on synthetic data
    simulate        write an excitation/measurement WAV pair for a preset

Exit codes: 0 success, 2 configuration error, 3 runtime or numerical error.
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

import torch

from src.common.errors import ConfigurationError, SubbandIdError
from src.common.logging_setup import configure_logging
from src.config.settings import PRESETS, RunConfig, get_settings, load_run_config
from src.dependency.detector_network import DetectorNetwork, save_detector
from src.dependency.synthetic import SyntheticDataset
from src.dependency.training import f1_score, predict_probabilities, train
from src.pipeline.identification import IdentificationRunner
from src.pipeline.scenarios import build_scenario
from src.provenance.run_manifest import build_manifest
from src.storage.artifact_store import ArtifactStore

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _parse_assignments(assignments: Sequence[str]) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for item in assignments:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"--set expects key=value, got '{item}'")
        value = value.strip()
        overrides[key.strip()] = None if value.lower() in ("none", "null") else value
    return overrides


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = _parse_assignments(args.set or [])
    flags = {"preset": args.preset, "output_dir": args.output_dir, "seed": args.seed}
    overrides.update({key: value for key, value in flags.items() if value is not None})
    return load_run_config(args.config, overrides)


def _finish(store: ArtifactStore, command: str):
    manifest = build_manifest(store.artifacts, command)
    store.write_json("manifest.json", manifest)


def cmd_identify(config: RunConfig) -> int:
    scenario = build_scenario(config)
    if scenario.sample_rate != config.fs:
        logger.warning(f"Input sample rate {scenario.sample_rate} Hz overrides configured fs {config.fs} Hz")
    runner = IdentificationRunner(config)

    with ArtifactStore(config.output_dir) as store:
        result = runner.run(scenario.excitation, scenario.measurement)

        store.write_wav("residual.wav", result.residual, scenario.sample_rate)
        store.adopt(result.report.write_trace_csv(store.path("error_trace.csv")))
        store.write_matrix("final_map.csv", result.final_map.matrix.astype(int))
        if result.final_map.conjugate is not None:
            store.write_matrix("final_conjugate_map.csv", result.final_map.conjugate.astype(int))
        store.write_matrix("mean_map.csv", result.mean_map)
        store.write_matrix("detected_map.csv", result.detected_map)
        stages = [f"stage_{m}" for m in range(result.stage_energies.shape[1])]
        rows = ((frame, *energies) for frame, energies in enumerate(result.stage_energies.tolist()))
        store.write_table("stage_energy.csv", ["frame", *stages], rows)
        extra = {
            "config": config.echo(),
            "map_refreshes": result.map_refreshes,
            "refresh_frames": result.refresh_frames,
            "promotions": result.promotions,
            "final_map_entries": result.final_map.num_entries,
        }
        store.adopt(result.report.write_json(store.path("report.json"), extra))
        _finish(store, "identify")

    print(f"delta = {result.report.delta_db:.2f} dB, ERLE = {result.report.erle_db:.2f} dB")
    return EXIT_OK


def cmd_train_detector(config: RunConfig) -> int:
    cfg = config.training_config()
    dataset = SyntheticDataset(config.train_examples, config.num_bins, config.history,
                               config.sparsity, config.train_noise_level, seed=config.seed)
    validation = dataset.independent_validation(cfg.validation_fraction)

    torch.manual_seed(config.seed)
    net = DetectorNetwork(config.num_bins, config.history)
    net, curve = train(net, dataset, cfg, validation)

    probabilities, targets = predict_probabilities(net, validation)
    f1 = f1_score(probabilities >= config.threshold, targets)

    with ArtifactStore(config.output_dir) as store:
        base = save_detector(net, store.path("detector"))
        store.adopt(base.with_suffix(".json"))
        store.adopt(base.with_suffix(".bin"))
        rows = [(0, "", float(curve.initial_validation))]
        rows += [(epoch + 1, float(tr), float(va))
                 for epoch, (tr, va) in enumerate(zip(curve.train, curve.validation))]
        store.write_table("loss.csv", ["epoch", "train_bce", "validation_bce"], rows)
        store.write_json("training_report.json", {
            "config": config.echo(),
            "initial_validation_bce": float(curve.initial_validation),
            "final_validation_bce": float(curve.validation[-1]) if curve.validation else None,
            "validation_f1": float(f1),
            "parameter_count": net.parameter_count,
        })
        _finish(store, "train-detector")

    print(f"validation F1 = {f1:.3f} at threshold {config.threshold}")
    return EXIT_OK


def cmd_simulate(config: RunConfig) -> int:
    scenario = build_scenario(config)
    with ArtifactStore(config.output_dir) as store:
        store.write_wav("excitation.wav", scenario.excitation, scenario.sample_rate)
        store.write_wav("measurement.wav", scenario.measurement, scenario.sample_rate)
        if scenario.loop_input is not None:
            rows = zip(range(len(scenario.loop_input)),
                       scenario.loop_input.tolist(), scenario.loop_output.tolist())
            store.write_table("hysteresis_loop.csv", ["n", "u", "d"], rows)
        store.write_json("simulation.json", {"config": config.echo(),
                                             "num_samples": int(len(scenario.excitation))})
        _finish(store, "simulate")
    return EXIT_OK


COMMANDS = {
    "identify": cmd_identify,
    "train-detector": cmd_train_detector,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subbandid", description="Subband nonlinear system identification")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", help="TOML run configuration file")
        sub.add_argument("--preset", choices=PRESETS)
        sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override one configuration field (repeatable)")
        sub.add_argument("--output-dir")
        sub.add_argument("--seed", type=int)
        sub.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    configure_logging(
        level=args.log_level or settings.log_level,
        log_dir=settings.log_dir,
        log_file=settings.log_file,
        max_bytes=settings.log_max_bytes,
        backup_count=settings.log_backup_count,
    )

    try:
        config = resolve_config(args)
        logger.info(f"Starting {args.command} (preset={config.preset}, seed={config.seed})")
        code = COMMANDS[args.command](config)
        logger.info(f"Finished {args.command}; artifacts in {config.output_dir}")
        return code
    except ConfigurationError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (SubbandIdError, ArithmeticError, RuntimeError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
