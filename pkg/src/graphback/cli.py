"""Command-line front end.

Subcommands: inspect, train-clean, select-trigger, attack, sweep-p,
sweep-t, baseline, transfer, report. Option precedence is defaults < flags
< --config JSON file (the file wins; its keys are the ExperimentConfig
field names). Poisoning rates given as values >= 1 are percents.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace as dc_replace

from .attack import AttackConfig, select_semantic_trigger, trigger_report_to_text
from .datasets import parse_tudataset, split_dataset
from .errors import DataError, NumericalError, UsageError
from .harness import (
    ExperimentConfig,
    default_target_label,
    load_experiment_config,
    normalize_rate,
    run_baseline_comparison,
    run_cell,
    run_transferability,
    sweep_poisoning_rates,
    sweep_trigger_sizes,
)
from .models import accuracy, init_model, save_model, train
from .reporting import render_report, write_cell_outputs


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; route through our own usage
    # error instead so the documented exit code (1) applies
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from exc


def _rate_list(text: str) -> tuple:
    try:
        return tuple(normalize_rate(float(v)) for v in text.split(","))
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated number list, got {text!r}") from exc


def build_parser() -> _Parser:
    parser = _Parser(prog="graphback",
                     description="Clean-label backdoor attacks on graph classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--dataset", help="TUDataset-format directory")
    shared.add_argument("--config", help="JSON config file; overrides flags")
    shared.add_argument("--out", help="output directory (default: results)")
    shared.add_argument("--target-label", type=int, help="forced output class (default per dataset)")
    shared.add_argument("--seeds", type=_int_list, help="comma-separated seed list (default 0,1,2,3,4)")
    shared.add_argument("--model", choices=["gcn", "sage"], help="architecture (default gcn)")
    shared.add_argument("--epochs", type=int, help="training epochs (default 100)")
    shared.add_argument("--train-frac", type=float, help="training fraction of the split (default 0.8)")
    shared.add_argument("--verbose", action="store_true", help="per-seed progress output")

    sub.add_parser("inspect", parents=[shared], help="print dataset statistics")

    sub.add_parser("train-clean", parents=[shared], help="train and evaluate clean models")

    sub.add_parser("select-trigger", parents=[shared],
                   help="rank node classes by aggregated degree centrality")

    p_attack = sub.add_parser("attack", parents=[shared], help="run one backdoor cell")
    p_attack.add_argument("--p", type=float, help="poisoning rate (>= 1 means percent; default 3)")
    p_attack.add_argument("--t", type=int, help="trigger size (default 1)")

    p_sweep_p = sub.add_parser("sweep-p", parents=[shared], help="sweep the poisoning rate")
    p_sweep_p.add_argument("--p", type=_rate_list, help="rates to sweep (default 1,3,5,7)")
    p_sweep_p.add_argument("--t", type=int, help="fixed trigger size (default 1)")

    p_sweep_t = sub.add_parser("sweep-t", parents=[shared], help="sweep the trigger size")
    p_sweep_t.add_argument("--t", type=_int_list, help="sizes to sweep (default 1,2,3)")
    p_sweep_t.add_argument("--p", type=float, help="fixed poisoning rate (default 3)")

    p_base = sub.add_parser("baseline", parents=[shared],
                            help="semantic attack vs fixed random-subgraph baseline")
    p_base.add_argument("--p", type=float, help="poisoning rate (default 3)")
    p_base.add_argument("--t", type=int, help="trigger size (default 3)")
    p_base.add_argument("--er-nodes", type=int, help="baseline pattern size (default 4)")
    p_base.add_argument("--er-prob", type=float, help="baseline edge probability (default 0.8)")

    p_transfer = sub.add_parser("transfer", parents=[shared],
                                help="run the attack against the GraphSAGE architecture")
    p_transfer.add_argument("--p", type=float, help="poisoning rate (default 3)")
    p_transfer.add_argument("--t", type=int, help="trigger size (default 3)")

    sub.add_parser("report", parents=[shared], help="merge CSVs in --out into report.md + figures")

    return parser


def _config_from_args(args, **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(**overrides)
    updates = {}
    if args.dataset is not None:
        updates["dataset_dir"] = args.dataset
    if args.target_label is not None:
        updates["target_label"] = args.target_label
    if args.seeds is not None:
        updates["seeds"] = args.seeds
    if args.model is not None:
        updates["model"] = args.model
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.epochs is not None:
        updates["epochs"] = args.epochs
    if args.train_frac is not None:
        updates["train_fraction"] = args.train_frac
    if getattr(args, "er_nodes", None) is not None:
        updates["er_nodes"] = args.er_nodes
    if getattr(args, "er_prob", None) is not None:
        updates["er_prob"] = args.er_prob
    p = getattr(args, "p", None)
    if p is not None:
        if isinstance(p, tuple):
            updates["p_values"] = p
        else:
            updates["p"] = normalize_rate(p)
    t = getattr(args, "t", None)
    if t is not None:
        if isinstance(t, tuple):
            updates["t_values"] = t
        else:
            updates["t"] = t
    if updates:
        cfg = dc_replace(cfg, **updates)
    if args.config is not None:
        cfg = load_experiment_config(args.config, cfg)
    return cfg


def _load_dataset(cfg: ExperimentConfig):
    if not cfg.dataset_dir:
        raise UsageError("--dataset is required for this command")
    return parse_tudataset(cfg.dataset_dir)


def _print_rows(rows) -> None:
    for r in rows:
        print(f"{r.dataset} {r.model} p={r.p:g} t={r.t}: "
              f"ACC_c {r.acc_clean_mean:.4f}  ACC_b {r.acc_backdoor_mean:.4f}  "
              f"ASR {r.asr_mean:.4f} (min {r.asr_min:.4f}, max {r.asr_max:.4f})  "
              f"CAD {r.cad_mean:+.4f}  clean-ASR {r.clean_asr_mean:.4f}")


def _attack_config(cfg: ExperimentConfig, dataset) -> AttackConfig:
    target = cfg.target_label if cfg.target_label is not None else default_target_label(dataset.name)
    return AttackConfig(target_label=target, poisoning_rate=cfg.p, trigger_size=cfg.t)


def cmd_inspect(args) -> int:
    cfg = _config_from_args(args)
    ds = _load_dataset(cfg)
    hist = " ".join(f"{label}:{count}" for label, count in enumerate(ds.label_histogram))
    print(f"dataset {ds.name}")
    print(f"graphs {len(ds.graphs)}")
    print(f"graph labels {ds.num_graph_labels} (counts: {hist})")
    print(f"node-class vocabulary {ds.node_class_vocab_size}")
    print(f"avg nodes {ds.avg_nodes():.2f}")
    print(f"avg edges {ds.avg_edges():.2f}")
    print(f"default target label {default_target_label(ds.name)}")
    return 0


def cmd_train_clean(args) -> int:
    cfg = _config_from_args(args)
    ds = _load_dataset(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    accs = []
    for seed in cfg.seeds:
        split = split_dataset(ds, cfg.train_fraction, seed)
        model = init_model(cfg.model, ds.node_class_vocab_size, ds.num_graph_labels,
                           cfg.hidden_channels, seed=seed)
        model, history = train(model, ds, split.train_indices, cfg.train_config(seed),
                               verbose=args.verbose)
        acc = accuracy(model, ds, split.test_indices)
        accs.append(acc)
        print(f"seed {seed}: test accuracy {acc:.4f} (final train loss {history.epoch_losses[-1]:.4f})")
        if seed == cfg.seeds[0]:
            path = os.path.join(cfg.out_dir, f"{ds.name}_{cfg.model}_clean.txt")
            save_model(model, path)
            print(f"checkpoint written to {path}")
    print(f"mean test accuracy over {len(accs)} seeds: {sum(accs) / len(accs):.4f}")
    return 0


def cmd_select_trigger(args) -> int:
    cfg = _config_from_args(args)
    ds = _load_dataset(cfg)
    target = cfg.target_label if cfg.target_label is not None else default_target_label(ds.name)
    split = split_dataset(ds, cfg.train_fraction, cfg.seeds[0])
    report = select_semantic_trigger(ds, split, target)
    text = trigger_report_to_text(report)
    print(text, end="")
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, f"{ds.name}_trigger_report.txt")
    with open(path, "w") as fh:
        fh.write(text)
    print(f"report written to {path}")
    return 0


def cmd_attack(args) -> int:
    cfg = _config_from_args(args, p=0.03, t=1)
    ds = _load_dataset(cfg)
    row = run_cell(ds, None, _attack_config(cfg, ds), cfg.train_config(0), cfg.model,
                   seeds=cfg.seeds, train_fraction=cfg.train_fraction,
                   hidden_channels=cfg.hidden_channels, clean_cache={}, verbose=args.verbose)
    _print_rows([row])
    paths = write_cell_outputs([row], cfg.out_dir, f"{ds.name}_{cfg.model}_attack", var="p")
    print("wrote " + ", ".join(paths))
    return 0


def cmd_sweep_p(args) -> int:
    cfg = _config_from_args(args, t=1)
    ds = _load_dataset(cfg)
    rows, flags = sweep_poisoning_rates(ds, cfg, verbose=args.verbose)
    _print_rows(rows)
    for flag in flags:
        print(f"note: {flag}")
    paths = write_cell_outputs(rows, cfg.out_dir, f"{ds.name}_{cfg.model}_sweep_p", var="p")
    print("wrote " + ", ".join(paths))
    return 0


def cmd_sweep_t(args) -> int:
    cfg = _config_from_args(args, p=0.03)
    ds = _load_dataset(cfg)
    rows = sweep_trigger_sizes(ds, cfg, verbose=args.verbose)
    _print_rows(rows)
    paths = write_cell_outputs(rows, cfg.out_dir, f"{ds.name}_{cfg.model}_sweep_t", var="t")
    print("wrote " + ", ".join(paths))
    return 0


def cmd_baseline(args) -> int:
    cfg = _config_from_args(args, p=0.03, t=3)
    ds = _load_dataset(cfg)
    sem, er = run_baseline_comparison(ds, cfg, verbose=args.verbose)
    _print_rows([sem, er])
    print(f"ASR separation (semantic - baseline): {sem.asr_mean - er.asr_mean:+.4f}")
    paths = write_cell_outputs([sem, er], cfg.out_dir, f"{ds.name}_{cfg.model}_baseline",
                               pairs=[(sem, er)])
    print("wrote " + ", ".join(paths))
    return 0


def cmd_transfer(args) -> int:
    cfg = _config_from_args(args, p=0.03, t=3)
    ds = _load_dataset(cfg)
    rows = run_transferability(ds, cfg, verbose=args.verbose)
    _print_rows(rows)
    paths = write_cell_outputs(rows, cfg.out_dir, f"{ds.name}_sage_transfer", transfer=True)
    print("wrote " + ", ".join(paths))
    return 0


def cmd_report(args) -> int:
    cfg = _config_from_args(args)
    path = render_report(cfg.out_dir)
    print(f"report written to {path}")
    return 0


_COMMANDS = {
    "inspect": cmd_inspect,
    "train-clean": cmd_train_clean,
    "select-trigger": cmd_select_trigger,
    "attack": cmd_attack,
    "sweep-p": cmd_sweep_p,
    "sweep-t": cmd_sweep_t,
    "baseline": cmd_baseline,
    "transfer": cmd_transfer,
    "report": cmd_report,
}


def cli_main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
