# main.py
"""
gppca コマンドライン。

  gppca simulate  --scenario <name|file> --out dir/
  gppca fit       --data Y.csv [--inputs X.csv] [--config cfg.json] --out model.json
  gppca predict   --model model.json --inputs X.csv [--observed rows.csv] [--out pred.csv]
  gppca benchmark --scenario <name|file> --methods pca,gppca,ly1,ly5 --replicates N --seed S --out report.csv

終了コード: 0 成功 / 2 引数・入力エラー / 3 数値計算の失敗 / 1 想定外の例外
"""

import argparse
import json
import logging
import os
import sys
from importlib.util import find_spec

logger = logging.getLogger("gppca")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_ARGUMENT = 2
EXIT_NUMERIC = 3


def global_exception_handler(exctype, value, tb):
    """
    未キャッチ例外をすべて捕捉し、トレースバックをログに残して終了コード 1 で抜ける。
    """
    if issubclass(exctype, KeyboardInterrupt):
        sys.__excepthook__(exctype, value, tb)
        return
    import traceback
    error_message = "".join(traceback.format_exception(exctype, value, tb))
    logger.critical(f"[Fatal Crash] {error_message}")
    print(
        "予期しないエラーが発生しました。開発者にこのエラーを報告してください。\n"
        f"【エラー内容】{value}",
        file=sys.stderr,
    )
    sys.exit(EXIT_UNEXPECTED)


# グローバル例外ハンドラーをシステムに登録
sys.excepthook = global_exception_handler


PYTHON_RUNTIME_PACKAGES = (
    "numpy",
    "scipy",
)


def _check_runtime_requirements():
    """起動前に必要な Python パッケージを確認し、足りないものを返す"""
    missing = []
    for module_name in PYTHON_RUNTIME_PACKAGES:
        if find_spec(module_name) is None:
            missing.append(f"Python package: {module_name}")
    return missing


def setup_logging(level_name: str) -> None:
    level = getattr(logging, str(level_name).upper(), None)
    if not isinstance(level, int):
        raise ValueError(f"unknown log level '{level_name}'")
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


# ══════════════════════════════════════════════════════════════
# サブコマンド
# ══════════════════════════════════════════════════════════════

def cmd_simulate(args) -> int:
    from modules.data.matrix_io import write_matrix
    from modules.sim.scenarios import load_scenario, simulate_dataset

    scenario = load_scenario(args.scenario, replicates=args.replicates, seed=args.seed, full_scale=args.full_scale)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "scenario.json"), "w", encoding="utf-8") as f:
        json.dump(scenario.to_dict(), f, indent=4, ensure_ascii=False)

    for r in range(scenario.replicates):
        data = simulate_dataset(scenario, r)
        folder = os.path.join(args.out, f"r{r:03d}")
        note = [f"scenario={scenario.name} replicate={r} base_seed={scenario.base_seed}"]
        write_matrix(os.path.join(folder, "Y.csv"), data.Y, comments=note)
        write_matrix(os.path.join(folder, "inputs.csv"), data.grid.points,
                     header=[f"x{m + 1}" for m in range(data.grid.p)], comments=note)
        write_matrix(os.path.join(folder, "A_true.csv"), data.A_true, comments=note)
        write_matrix(os.path.join(folder, "Z_true.csv"), data.Z_true, comments=note)
        write_matrix(os.path.join(folder, "mean_true.csv"), data.mean_true, comments=note)
        if data.test_inputs is not None and data.test_Y is not None:
            write_matrix(os.path.join(folder, "test_inputs.csv"), data.test_inputs, header=["x1"], comments=note)
            write_matrix(os.path.join(folder, "test_Y.csv"), data.test_Y, comments=note)
    logger.info(f"[CLI] wrote {scenario.replicates} replicate(s) of '{scenario.name}' to {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    from modules.core.gppca_core import fit
    from modules.data.matrix_io import read_inputs, read_output_matrix
    from modules.utils.config_handler import ConfigHandler

    handler = ConfigHandler(args.config)
    overrides = {}
    if args.factors is not None:
        overrides["n_factors"] = args.factors
    config = handler.to_fit_config(overrides)

    grid = None
    if args.inputs:
        covariates = (config.mean_basis or {}).get("covariate_columns", []) or []
        grid = read_inputs(args.inputs, covariates)
    Y = read_output_matrix(args.data, grid)
    model = fit(Y, config)

    folder = os.path.dirname(args.out)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(model.to_dict(), f, indent=2)
    logger.info(f"[CLI] model written to {args.out} (loglik={model.log_likelihood:.6g}, converged={model.converged})")
    return EXIT_OK


def _load_model(path: str):
    from modules.core.gppca_core import FittedModel
    from modules.utils.errors import GPPCAArgumentError

    if not os.path.exists(path):
        raise GPPCAArgumentError(f"model file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return FittedModel.from_dict(data)
    except json.JSONDecodeError as e:
        raise GPPCAArgumentError(f"malformed model JSON {path}: line {e.lineno}: {e.msg}") from e
    except (KeyError, TypeError) as e:
        raise GPPCAArgumentError(f"incomplete model file {path}: {e}") from e


def prediction_table(preds, rows):
    """予測分布の列を (ヘッダー, 行列) にする。rows は各予測の出力行番号"""
    import numpy as np

    header = []
    for prefix in ("mean", "sd", "lower", "upper"):
        header += [f"{prefix}_{j}" for j in rows]
    table = []
    for pn in preds:
        lo, hi = pn.interval()
        table.append(np.concatenate([pn.mean, pn.sd, lo, hi]))
    return header, np.asarray(table)


def cmd_predict(args) -> int:
    import numpy as np

    from modules.core.prediction import conditional_predict, predict_batch
    from modules.data.matrix_io import read_observed_rows, split_input_columns, write_matrix
    from modules.utils.errors import GPPCAArgumentError

    model = _load_model(args.model)
    X, covs = split_input_columns(args.inputs, model.grid.covariate_names)

    if args.observed:
        indices, values = read_observed_rows(args.observed)
        if values.shape[0] != X.shape[0]:
            raise GPPCAArgumentError(
                f"observed file has {values.shape[0]} value rows but {X.shape[0]} inputs were given"
            )
        rows = [j for j in range(model.k) if j not in set(indices)]
        preds = [
            conditional_predict(model, X[i], indices, values[i], None if covs is None else covs[i])
            for i in range(X.shape[0])
        ]
    else:
        rows = list(range(model.k))
        preds = predict_batch(model, X, covs)

    header, table = prediction_table(preds, rows)
    if args.out:
        write_matrix(args.out, table, header=header)
        logger.info(f"[CLI] {len(preds)} prediction(s) written to {args.out}")
    else:
        print(",".join(header))
        for row in np.atleast_2d(table):
            print(",".join(f"{v:.17g}" for v in row))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from modules.sim.harness import parse_methods, run_experiment
    from modules.sim.scenarios import load_scenario
    from modules.utils.config_handler import ConfigHandler

    methods = parse_methods(args.methods)
    scenario = load_scenario(args.scenario, replicates=args.replicates, seed=args.seed, full_scale=args.full_scale)
    base_config = ConfigHandler(args.config).to_fit_config() if args.config else None
    report = run_experiment(scenario, methods, workers=args.workers, base_config=base_config)

    report.write_csv(args.out)
    stem, _ = os.path.splitext(args.out)
    report.write_summary_csv(f"{stem}_summary.csv")
    report.write_timing_csv(f"{stem}_timing.csv")
    for row in report.summary():
        logger.info(
            f"[CLI] {row['method']}: median angle={row['median_angle']:.4g} "
            f"AvgMSE={row['avg_mse']:.4g} failures={row['failures']}"
        )
    return EXIT_OK


# ══════════════════════════════════════════════════════════════
# 引数解析
# ══════════════════════════════════════════════════════════════

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gppca", description="Generalized probabilistic PCA")
    parser.add_argument("--log-level", default="INFO", help="DEBUG, INFO, WARNING, ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write simulated datasets for a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--full-scale", action="store_true")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fit", help="fit a GPPCA model to a k x n CSV matrix")
    p.add_argument("--data", required=True)
    p.add_argument("--inputs", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--factors", type=int, default=None, help="overrides n_factors in the config")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("predict", help="predictive distributions at new inputs")
    p.add_argument("--model", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--observed", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("benchmark", help="replicated comparison of subspace estimators")
    p.add_argument("--scenario", required=True)
    p.add_argument("--methods", default="pca,gppca,ly1,ly5")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--full-scale", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    missing = _check_runtime_requirements()
    if missing:
        print("[Fatal] 実行に必要な依存関係が不足しています。", file=sys.stderr)
        for item in missing:
            print(f"  - {item}", file=sys.stderr)
        print("requirements.txt をインストールして再実行してください。", file=sys.stderr)
        return EXIT_UNEXPECTED

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        setup_logging(args.log_level)
    except ValueError as e:
        parser.error(str(e))

    from modules.utils.errors import GPPCAArgumentError, GPPCANumericError

    try:
        return args.handler(args)
    except GPPCAArgumentError as e:
        logger.error(f"[CLI] {e}")
        return EXIT_ARGUMENT
    except GPPCANumericError as e:
        logger.error(f"[CLI] numerical failure: {e}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
