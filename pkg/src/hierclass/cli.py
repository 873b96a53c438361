"""Command-line entry point.

One JSON config file drives every subcommand; ``--set key.path=value``
overrides beat the file, and the effective config is echoed into every
artifact. Exit codes: 0 success, 1 for config/input validation problems,
2 for runtime failures.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import pathlib
import sys
from concurrent.futures import ThreadPoolExecutor

from .corpus import CorpusError, Page, parse_corpus, split
from .decision import (
    DecisionError,
    METRICS,
    Strategy,
    select,
    tune_threshold,
)
from .encoder import EncoderError, load_embeddings
from .heads import gru_decode
from .metrics import MetricsError, error_taxonomy, micro_prf, macro_prf
from .ontology import Ontology, OntologyError, load_ene, parse_ontology
from .synthetic import SyntheticConfig, write_synthetic
from .trainer import (
    GRAD_CHECK_COMPONENTS,
    BadCheckpoint,
    HashProvider,
    TrainConfig,
    evaluate,
    grad_check,
    restore,
    train,
)

COMMANDS = ("train", "eval", "predict", "tune-threshold", "error-analysis",
            "gen-synthetic", "grad-check")
STRATEGY_KINDS = ("Threshold", "MaxScore", "ThresholdWithMax")
SPLITS = ("dev", "train", "all")


class ConfigError(Exception):
    pass


def _default_config() -> dict:
    return {
        "ontology": "ene",
        "corpus": None,
        "embeddings": None,
        "encoder": {"kind": "hash", "d": 32, "seq": 32, "seed": 0},
        "train": {},
        "out_dir": None,
        "checkpoint": None,
        "predictions": None,
        "report": None,
        "strategy": {"kind": "MaxScore", "theta": None},
        "metric": "macroF1",
        "split": "dev",
        "langs": None,
        "threads": 1,
        "synthetic": {},
        "grad_check": {"components": list(GRAD_CHECK_COMPONENTS),
                       "trials": 25, "eps": 1e-4, "seed": 0},
    }


_NESTED_KEYS = {
    "encoder": {"kind", "d", "seq", "seed"},
    "strategy": {"kind", "theta"},
    "grad_check": {"components", "trials", "eps", "seed"},
    "train": {f.name for f in dataclasses.fields(TrainConfig)},
    "synthetic": {f.name for f in dataclasses.fields(SyntheticConfig)},
}


def _check_key(section: str | None, key: str) -> None:
    if section is None:
        if key not in _default_config():
            raise ConfigError(f"unknown config key {key!r}")
    else:
        if key not in _NESTED_KEYS.get(section, set()):
            raise ConfigError(f"unknown config key {section + '.' + key!r}")


def _merge_section(cfg: dict, section: str, value) -> None:
    if section in _NESTED_KEYS:
        if not isinstance(value, dict):
            raise ConfigError(f"config key {section!r} must be an object")
        for k, v in value.items():
            _check_key(section, k)
            cfg[section][k] = v
    else:
        cfg[section] = value


def _parse_set(expr: str) -> tuple[list[str], object]:
    if "=" not in expr:
        raise ConfigError(f"--set needs key=value, got {expr!r}")
    key, _, raw = expr.partition("=")
    path = key.strip().split(".")
    if not all(path):
        raise ConfigError(f"--set has an empty key segment in {expr!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def build_config(config_path: str | None, sets: list[str]) -> dict:
    """Defaults <- config file <- --set overrides; unknown keys rejected."""
    cfg = copy.deepcopy(_default_config())
    if config_path is not None:
        try:
            data = json.loads(pathlib.Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in data.items():
            _check_key(None, key)
            _merge_section(cfg, key, value)
    for expr in sets:
        path, value = _parse_set(expr)
        if len(path) == 1:
            _check_key(None, path[0])
            _merge_section(cfg, path[0], value)
        elif len(path) == 2:
            _check_key(None, path[0])
            _check_key(path[0], path[1])
            cfg[path[0]][path[1]] = value
        else:
            raise ConfigError(f"unknown config key {'.'.join(path)!r}")
    _validate_shared(cfg)
    return cfg


def _validate_shared(cfg: dict) -> None:
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError(f"threads must be a positive integer, got {cfg['threads']}")
    if cfg["metric"] not in METRICS:
        raise ConfigError(f"metric must be one of {METRICS}, got {cfg['metric']!r}")
    if cfg["split"] not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}, got {cfg['split']!r}")
    if cfg["strategy"]["kind"] not in STRATEGY_KINDS:
        raise ConfigError(f"strategy.kind must be one of {STRATEGY_KINDS}, "
                          f"got {cfg['strategy']['kind']!r}")
    theta = cfg["strategy"]["theta"]
    if theta is not None and not isinstance(theta, (int, float, dict)):
        raise ConfigError("strategy.theta must be a number or a lang->number map")
    if cfg["encoder"]["kind"] != "hash":
        raise ConfigError(f"encoder.kind must be 'hash', got {cfg['encoder']['kind']!r}")
    if cfg["langs"] is not None and not (
            isinstance(cfg["langs"], list) and all(isinstance(x, str) for x in cfg["langs"])):
        raise ConfigError("langs must be a list of language codes")


# ------------------------------------------------------------- plumbing

def _require(cfg: dict, key: str, cmd: str):
    if cfg[key] is None:
        raise ConfigError(f"config key {key!r} is required for {cmd}")
    return cfg[key]


def _existing(path: str, what: str) -> pathlib.Path:
    p = pathlib.Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {path}")
    return p


def _load_ontology(cfg: dict) -> Ontology:
    src = cfg["ontology"]
    if src == "ene":
        return load_ene()
    return parse_ontology(_existing(src, "ontology file").read_text())


def _load_pages(cfg: dict, o: Ontology, cmd: str) -> list[Page]:
    path = _existing(_require(cfg, "corpus", cmd), "corpus file")
    pages = parse_corpus(path, o)
    if cfg["langs"] is not None:
        keep = set(cfg["langs"])
        pages = [p for p in pages if p.lang in keep]
        if not pages:
            raise ConfigError(f"no corpus pages for langs {sorted(keep)}")
    return pages


def _provider(cfg: dict, pages: list[Page]):
    if cfg["embeddings"] is not None:
        return load_embeddings(_existing(cfg["embeddings"], "embeddings file"))
    enc = cfg["encoder"]
    return HashProvider(pages, enc["d"], enc["seq"], enc["seed"])


def _restore_model(cfg: dict, o: Ontology, cmd: str):
    path = _existing(_require(cfg, "checkpoint", cmd), "checkpoint")
    return restore(path, o)


def _check_dims(provider, tcfg: TrainConfig) -> None:
    if (provider.d, provider.seq) != (tcfg.d, tcfg.seq):
        raise ConfigError(
            f"embedding geometry ({provider.d}, {provider.seq}) does not match "
            f"the model's (d, seq) = ({tcfg.d}, {tcfg.seq})")


def _split_pages(cfg: dict, pages: list[Page], tcfg: TrainConfig) -> list[Page]:
    which = cfg["split"]
    if which == "all":
        return sorted(pages, key=lambda p: (p.lang, p.page_id))
    sc = split(pages, tcfg.seed, tcfg.split_ratio)
    return list(sc.dev if which == "dev" else sc.train)


def _check_head_strategy(cfg: dict, tcfg: TrainConfig) -> None:
    if tcfg.head == "gru" and cfg["strategy"]["kind"] != "MaxScore":
        raise ConfigError("threshold strategies need a linear head checkpoint; "
                          "the sequential decoder emits no score vector")


def _strategy_for(cfg: dict, lang: str) -> Strategy:
    kind = cfg["strategy"]["kind"]
    if kind == "MaxScore":
        return Strategy.max_score()
    theta = cfg["strategy"]["theta"]
    if isinstance(theta, dict):
        if lang not in theta:
            raise ConfigError(f"strategy.theta has no entry for language {lang!r}")
        theta = theta[lang]
    if theta is None:
        raise ConfigError(f"strategy.theta is required for kind {kind!r}")
    if kind == "Threshold":
        return Strategy.threshold(float(theta))
    return Strategy.threshold_with_max(float(theta))


def _write_json(path, payload: dict) -> None:
    pathlib.Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _report_path(cfg: dict, default_name: str, cmd: str, required: bool = True):
    if cfg["report"] is not None:
        return pathlib.Path(cfg["report"])
    if cfg["out_dir"] is not None:
        out = pathlib.Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        return out / default_name
    if required:
        raise ConfigError(f"config key 'report' or 'out_dir' is required for {cmd}")
    return None


# ------------------------------------------------------------- commands

def _cmd_train(cfg: dict) -> int:
    o = _load_ontology(cfg)
    for key in ("head", "pooling", "d", "seq"):
        if key not in cfg["train"]:
            raise ConfigError(f"config key 'train.{key}' is required for train")
    tcfg = TrainConfig.from_dict(cfg["train"])
    pages = _load_pages(cfg, o, "train")
    provider = _provider(cfg, pages)
    _check_dims(provider, tcfg)
    out_dir = _require(cfg, "out_dir", "train")
    result = train(tcfg, pages, o, provider, out_dir=out_dir)
    _write_json(pathlib.Path(out_dir) / "config.json", {"config": cfg})
    final = [row for row in result.metrics
             if row["step"] == result.metrics[-1]["step"]]
    for row in final:
        print(f"step {row['step']:>6} {row['lang']:>4} "
              f"macroF1={row['macro_f1']:.4f} microF1={row['micro_f1']:.4f}")
    print(f"checkpoint: {result.final_checkpoint}")
    return 0


def _predictions_for(cfg: dict, model, tcfg, o: Ontology, pages: list[Page]):
    """(page, labels, scores-map) triples for the selected split."""
    provider = _provider(cfg, pages)
    _check_dims(provider, tcfg)
    chosen = _split_pages(cfg, pages, tcfg)

    def one(page: Page):
        E = provider.get(page.lang, page.page_id)
        if tcfg.head == "gru":
            v, _ = model.pool_fwd(E)
            path = gru_decode(v, model.head, o)
            leaf = path.labels[-1]
            return page, {leaf}, {leaf: path.scores[-1]}
        scores = model.scores(E)
        labels = select(scores, _strategy_for(cfg, page.lang), o, tcfg.head)
        index = o.leaf_index if tcfg.head == "linear-leaf" else o.full_index
        return page, labels, {lb: float(scores[index[lb]]) for lb in sorted(labels)}

    threads = cfg["threads"]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, chosen))
    return [one(page) for page in chosen]


def _cmd_predict(cfg: dict) -> int:
    o = _load_ontology(cfg)
    model, tcfg, _ = _restore_model(cfg, o, "predict")
    _check_head_strategy(cfg, tcfg)
    pages = _load_pages(cfg, o, "predict")
    out = cfg["predictions"]
    if out is None:
        if cfg["out_dir"] is None:
            raise ConfigError("config key 'predictions' or 'out_dir' is required "
                              "for predict")
        out_dir = pathlib.Path(cfg["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        out = out_dir / "predictions.jsonl"
    out = pathlib.Path(out)
    rows = _predictions_for(cfg, model, tcfg, o, pages)
    with out.open("w") as fh:
        for page, labels, scores in rows:
            fh.write(json.dumps({"page_id": page.page_id, "lang": page.lang,
                                 "labels": sorted(labels), "scores": scores}) + "\n")
    _write_json(str(out) + ".config.json", {"config": cfg})
    print(f"wrote {len(rows)} predictions to {out}")
    return 0


def _read_predictions(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"predictions line {line_no}: not JSON ({exc})")
            if not isinstance(row, dict) or not {"page_id", "lang", "labels"} <= set(row):
                raise ValueError(f"predictions line {line_no}: needs page_id, "
                                 f"lang, labels")
            rows.append(row)
    return rows


def _pairs_by_lang(pred_rows: list[dict], pages: list[Page]):
    gold = {(p.lang, p.page_id): p.gold for p in pages}
    by_lang: dict[str, list] = {}
    for row in pred_rows:
        key = (row["lang"], row["page_id"])
        if key not in gold:
            raise ConfigError(f"prediction for unknown page {key}")
        by_lang.setdefault(row["lang"], []).append((set(row["labels"]), gold[key]))
    return by_lang


def _predict_pairs(model, pages, provider, strategy, threads):
    def one(page: Page):
        return model.predict(provider.get(page.lang, page.page_id), strategy), page.gold

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, pages))
    return [one(page) for page in pages]


def _cmd_eval(cfg: dict) -> int:
    o = _load_ontology(cfg)
    pages = _load_pages(cfg, o, "eval")
    if cfg["predictions"] is not None:
        pred_rows = _read_predictions(_existing(cfg["predictions"], "predictions file"))
        by_lang = _pairs_by_lang(pred_rows, pages)
        all_pairs = [pair for pairs in by_lang.values() for pair in pairs]
        micro_prf(all_pairs)  # EmptyInput on an empty predictions file
        rows = [_eval_row(lang, by_lang[lang]) for lang in sorted(by_lang)]
        rows.append(_eval_row("all", all_pairs))
    elif (isinstance(cfg["strategy"]["theta"], dict)
          and cfg["strategy"]["kind"] != "MaxScore"):
        # per-language thresholds: one prediction pass per language
        model, tcfg, _ = _restore_model(cfg, o, "eval")
        _check_head_strategy(cfg, tcfg)
        provider = _provider(cfg, pages)
        _check_dims(provider, tcfg)
        by_lang: dict[str, list[Page]] = {}
        for page in _split_pages(cfg, pages, tcfg):
            by_lang.setdefault(page.lang, []).append(page)
        rows, all_pairs = [], []
        for lang in sorted(by_lang):
            pairs = _predict_pairs(model, by_lang[lang], provider,
                                   _strategy_for(cfg, lang), cfg["threads"])
            rows.append(_eval_row(lang, pairs))
            all_pairs.extend(pairs)
        rows.append(_eval_row("all", all_pairs))
    else:
        model, tcfg, _ = _restore_model(cfg, o, "eval")
        _check_head_strategy(cfg, tcfg)
        provider = _provider(cfg, pages)
        _check_dims(provider, tcfg)
        chosen = _split_pages(cfg, pages, tcfg)
        strategy = None if tcfg.head == "gru" else _strategy_for(cfg, "")
        rows = evaluate(model, chosen, provider, strategy, cfg["threads"])
    _finish_eval(cfg, rows)
    return 0


def _eval_row(lang: str, pairs) -> dict:
    mp, mr, mf = micro_prf(pairs)
    Mp, Mr, Mf, _ = macro_prf(pairs)
    return {"lang": lang, "macro_f1": Mf, "micro_f1": mf, "macro_p": Mp,
            "macro_r": Mr, "micro_p": mp, "micro_r": mr}


def _finish_eval(cfg: dict, rows: list[dict]) -> None:
    print(f"{'lang':>5} {'macroP':>8} {'macroR':>8} {'macroF1':>8} "
          f"{'microP':>8} {'microR':>8} {'microF1':>8}")
    for row in rows:
        print(f"{row['lang']:>5} {row['macro_p']:8.4f} {row['macro_r']:8.4f} "
              f"{row['macro_f1']:8.4f} {row['micro_p']:8.4f} "
              f"{row['micro_r']:8.4f} {row['micro_f1']:8.4f}")
    report = _report_path(cfg, "eval.json", "eval", required=False)
    if report is not None:
        _write_json(report, {"config": cfg, "rows": rows})


def _cmd_tune_threshold(cfg: dict) -> int:
    o = _load_ontology(cfg)
    model, tcfg, step = _restore_model(cfg, o, "tune-threshold")
    if tcfg.head == "gru":
        raise ConfigError("tune-threshold needs a linear head checkpoint; "
                          "the sequential decoder has no score threshold")
    pages = _load_pages(cfg, o, "tune-threshold")
    provider = _provider(cfg, pages)
    _check_dims(provider, tcfg)
    chosen = _split_pages(cfg, pages, tcfg)
    by_lang: dict[str, list[Page]] = {}
    for page in chosen:
        by_lang.setdefault(page.lang, []).append(page)
    rows = []
    for lang in sorted(by_lang):
        score_rows = [model.scores(provider.get(p.lang, p.page_id))
                      for p in by_lang[lang]]
        golds = [p.gold for p in by_lang[lang]]
        theta = tune_threshold(score_rows, golds, o, tcfg.head, cfg["metric"])
        rows.append({"lang": lang, "steps": step, "theta": theta})
    print(f"{'lang':>5} {'steps':>8} {'theta':>12}")
    for row in rows:
        print(f"{row['lang']:>5} {row['steps']:>8} {row['theta']:>12.6g}")
    report = _report_path(cfg, "thetas.json", "tune-threshold")
    _write_json(report, {"config": cfg, "metric": cfg["metric"], "rows": rows})
    return 0


def _cmd_error_analysis(cfg: dict) -> int:
    o = _load_ontology(cfg)
    pages = _load_pages(cfg, o, "error-analysis")
    path = _existing(_require(cfg, "predictions", "error-analysis"),
                     "predictions file")
    by_lang = _pairs_by_lang(_read_predictions(path), pages)
    all_pairs = [pair for pairs in by_lang.values() for pair in pairs]
    rows = []
    for lang in sorted(by_lang) + ["all"]:
        pairs = all_pairs if lang == "all" else by_lang[lang]
        br = error_taxonomy(pairs)
        rows.append({"lang": lang, "n_samples": br.n_samples, "correct": br.correct,
                     "completely_incorrect": br.completely_incorrect,
                     "over_predicted": br.over_predicted,
                     "under_predicted": br.under_predicted,
                     "over_and_under": br.over_and_under})
    header = ["lang", "n_samples", "correct", "completely_incorrect",
              "over_predicted", "under_predicted", "over_and_under"]
    print(" ".join(f"{h:>20}" if h != "lang" else f"{h:>5}" for h in header))
    for row in rows:
        print(" ".join(f"{row[h]:>20}" if h != "lang" else f"{row[h]:>5}"
                       for h in header))
    report = _report_path(cfg, "error_analysis.json", "error-analysis")
    _write_json(report, {"config": cfg, "rows": rows})
    return 0


def _cmd_gen_synthetic(cfg: dict) -> int:
    out_dir = _require(cfg, "out_dir", "gen-synthetic")
    scfg = SyntheticConfig.from_dict(cfg["synthetic"])
    manifest = write_synthetic(out_dir, scfg, extra_manifest={"config": cfg})
    print(f"taxonomy: {manifest['taxonomy']['n_total']} labels "
          f"({manifest['taxonomy']['n_leaf']} leaves)")
    print(f"corpus: {manifest['corpus']['n_pages']} pages "
          f"({manifest['corpus']['n_multi_label']} multi-label)")
    print(f"wrote {pathlib.Path(out_dir) / 'manifest.json'}")
    return 0


def _cmd_grad_check(cfg: dict) -> int:
    gc = cfg["grad_check"]
    unknown = [c for c in gc["components"] if c not in GRAD_CHECK_COMPONENTS]
    if unknown:
        raise ConfigError(f"unknown grad_check component {unknown[0]!r}")
    reports = []
    for component in gc["components"]:
        report = grad_check(component, gc["trials"], gc["eps"], gc["seed"])
        reports.append(report)
        print(f"{component:>20}: max rel err {report['max_rel_error']:.3e} "
              f"(worst {report['worst_param'] or '-'})")
    report_path = _report_path(cfg, "grad_check.json", "grad-check", required=False)
    if report_path is not None:
        _write_json(report_path, {"config": cfg, "reports": reports})
    return 0


_DISPATCH = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "tune-threshold": _cmd_tune_threshold,
    "error-analysis": _cmd_error_analysis,
    "gen-synthetic": _cmd_gen_synthetic,
    "grad-check": _cmd_grad_check,
}

_VALIDATION_ERRORS = (ConfigError, OntologyError, CorpusError, EncoderError,
                      MetricsError, DecisionError, BadCheckpoint, ValueError,
                      FileNotFoundError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierclass",
        description="Hierarchical multi-label text classification over "
                    "pooled token embeddings.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        dest="sets", help="override a config key (repeatable); "
                        "values parse as JSON, falling back to strings")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits itself; usage errors map to 1
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1
    try:
        cfg = build_config(args.config, args.sets)
        return _DISPATCH[args.command](cfg)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - boundary: report and exit 2
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
