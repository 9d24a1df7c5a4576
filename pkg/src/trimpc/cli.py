"""Command-line driver: party runner, benchmark suites, training demos.

Exit codes: 0 success, 2 bad config/usage, 3 handshake failure,
4 transport failure, 5 protocol desync, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bilinear import ConvShape
from .errors import (
    ConfigError,
    DataError,
    DesyncError,
    HandshakeError,
    TransportError,
)
from .nn_train import (
    TrainConfig,
    cnn_train_step,
    count_domain_violations,
    gaussian_blobs,
    lr_train_step,
    load_dataset,
    make_toy_cnn,
    take_rows,
    validate_binary_labels,
)
from .oracle_metrics import auc_score
from .ring import RingParams, decode, encode
from .session import run_local_sim, run_socket_party
from .sharing import open_share
from .transport import PartyId, SessionConfig, stats_report_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_HANDSHAKE = 3
EXIT_TRANSPORT = 4
EXIT_PROTOCOL = 5


def _emit(rows, out_path: str | None):
    text = "\n".join(json.dumps(r) for r in rows)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    print(text)


def _lr_job_factory(feats, labels, cfg: TrainConfig, params: RingParams, report):
    """Training job shared by local-sim and socket modes. Every party knows
    the data shapes; P0 owns the values."""
    f = params.f
    n_rows, dim = feats.shape
    Xq = encode(feats, params, f)
    yq = encode(labels, params, f)
    w0q = encode(np.zeros(dim), params, f)

    def job(sess):
        Xs = sess.input_share("X", Xq)
        ys = sess.input_share("y", yq)
        ws = sess.input_share("w0", w0q)
        for it in range(cfg.iterations):
            lo = (it * cfg.batch_size) % max(1, n_rows - cfg.batch_size + 1)
            rows = slice(lo, lo + cfg.batch_size)
            ws = lr_train_step(sess, take_rows(Xs, rows), take_rows(ys, rows), ws, cfg)
            if report and not sess.offline and not sess.is_dealer:
                w_open = open_share(sess, ws, name=f"metrics{it}")
                w_dec = decode(w_open)
                scores = feats @ w_dec
                report(
                    {
                        "iter": it,
                        "loss_proxy": float(np.mean((scores - labels) ** 2)),
                        "auc": auc_score(labels, scores),
                        "domain_warnings": count_domain_violations(scores),
                    },
                    sess,
                )
            elif report:
                open_share(sess, ws, name=f"metrics{it}")
        return ws

    return job


def cmd_train_lr(args) -> int:
    params = RingParams(args.n, args.f)
    cfg = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        iterations=args.iterations,
        seed=args.seed,
    )
    if args.data:
        feats, labels = load_dataset(args.data, seed=cfg.seed)
        validate_binary_labels(labels)
    else:
        feats, labels = gaussian_blobs(2000, 10, seed=cfg.seed)
    rows: list[dict] = []

    def report(row, sess):
        if sess.party == PartyId.P0:
            rows.append(row)

    job = _lr_job_factory(feats, labels, cfg, params, report)
    _, stats = run_local_sim(job, params, seed=f"train-lr-{cfg.seed}", timeout=600.0)
    rows.append({"comm": stats.to_json()})
    _emit(rows, args.out)
    return EXIT_OK


def cmd_train_cnn_toy(args) -> int:
    params = RingParams(args.n, args.f)
    cv = ConvShape(B=args.batch_size, m=8, n=8, C=1, r=3, s=3, D=4)
    classes = 4
    cfg = TrainConfig(
        learning_rate=args.lr,
        batch_size=cv.B,
        iterations=args.iterations,
        seed=args.seed,
    )
    rng = np.random.default_rng(cfg.seed)
    imgs = rng.uniform(-1, 1, size=cv.input_shape)
    labels = rng.integers(0, classes, size=cv.B)
    onehot = np.eye(classes)[labels]
    Xq = encode(imgs, params, params.f)
    oq = encode(onehot, params, params.f)
    rows: list[dict] = []

    def job(sess):
        xs = sess.input_share("x", Xq)
        os_ = sess.input_share("onehot", oq)
        model = make_toy_cnn(sess, cv, classes, seed=cfg.seed)
        for it in range(cfg.iterations):
            model = cnn_train_step(sess, xs, os_, model, cfg)
            wc = open_share(sess, model.conv.param, name=f"wc{it}")
            wd = open_share(sess, model.dense.param, name=f"wd{it}")
            if not sess.offline and not sess.is_dealer and sess.party == PartyId.P0:
                from .oracle_metrics import float_conv2d, float_sigmoid, float_softmax

                hidden = cv.m_out * cv.n_out * cv.D
                z = float_conv2d(imgs, decode(wc), cv)
                act = float_sigmoid(z).reshape(cv.B, hidden)
                probs = float_softmax(act @ decode(wd))
                ce = float(-np.log(probs[np.arange(cv.B), labels] + 1e-12).mean())
                acc = float((probs.argmax(1) == labels).mean())
                rows.append({"iter": it, "train_acc": acc, "ce_loss": ce})
        return model

    _, stats = run_local_sim(job, params, seed=f"train-cnn-{cfg.seed}", timeout=600.0)
    rows.append({"comm": stats.to_json()})
    _emit(rows, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    from . import bench

    suite = args.suite
    if suite == "conv-comm":
        rows = bench.conv_comm_suite()
    elif suite == "sigmoid":
        rows = [bench.sigmoid_suite(), bench.chebyshev_suite()]
    elif suite == "sin":
        rows = [bench.sin_suite()]
    elif suite == "softmax-comm":
        rows = [bench.softmax_comm_suite(classes=m) for m in (1, 10, 100)]
    elif suite == "softmax-kl":
        rows = bench.softmax_kl_suite(long=args.long, seed=args.seed)
    else:
        raise ConfigError(f"unknown suite {suite!r}")
    _emit(rows, args.out)
    return EXIT_OK


def cmd_run_party(args) -> int:
    with open(args.config) as fh:
        obj = json.load(fh)
    cfg = SessionConfig.from_json(obj)
    if args.mode:
        cfg.mode = args.mode
    job_spec = obj.get("job", {})
    jtype = job_spec.get("type", "train-lr")
    tcfg = TrainConfig(
        learning_rate=float(job_spec.get("learning_rate", 0.01)),
        batch_size=int(job_spec.get("batch_size", 128)),
        iterations=int(job_spec.get("iterations", 10)),
        seed=int(job_spec.get("seed", 0)),
        dataset=job_spec.get("dataset"),
    )
    if jtype == "train-lr":
        if tcfg.dataset:
            feats, labels = load_dataset(tcfg.dataset, seed=tcfg.seed)
            validate_binary_labels(labels)
        else:
            feats, labels = gaussian_blobs(2000, 10, seed=tcfg.seed)
        job = _lr_job_factory(feats, labels, tcfg, cfg.params, report=None)
    else:
        raise ConfigError(f"unknown job type {jtype!r}")

    if cfg.mode == "local-sim":
        _, stats = run_local_sim(job, cfg.params, seed=cfg.seed, timeout=cfg.timeout)
    else:
        _, stats = run_socket_party(cfg, job)
    out = obj.get("out") or args.out
    report = stats_report_json(stats, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(report + "\n")
    print(report)
    return EXIT_OK


def cmd_report_merge(args) -> int:
    """Combine per-party CommStats JSON files from a sockets run."""
    edges = []
    rounds = {"offline": 0, "online": 0}
    for path in args.reports:
        with open(path) as fh:
            obj = json.load(fh)
        edges.extend(obj["edges"])
        for ph in rounds:
            rounds[ph] = max(rounds[ph], obj["rounds"][ph])
    merged = {"edges": edges, "rounds": rounds}
    text = json.dumps(merged, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trimpc")
    sub = ap.add_subparsers(dest="command", required=True)

    rp = sub.add_parser("run-party", help="join a session from a JSON config")
    rp.add_argument("--config", required=True)
    rp.add_argument("--mode", choices=["local-sim", "sockets"])
    rp.add_argument("--out")
    rp.set_defaults(fn=cmd_run_party)

    bn = sub.add_parser("bench", help="run a benchmark suite in local-sim")
    bn.add_argument(
        "--suite",
        required=True,
        choices=["conv-comm", "sigmoid", "softmax-kl", "softmax-comm", "sin"],
    )
    bn.add_argument("--seed", type=int, default=0)
    bn.add_argument("--long", action="store_true", help="include the 10000-class row")
    bn.add_argument("--out")
    bn.set_defaults(fn=cmd_bench)

    for name, fn in (("train-lr", cmd_train_lr), ("train-cnn-toy", cmd_train_cnn_toy)):
        tp = sub.add_parser(name, help=f"{name} in local-sim, metrics as JSON lines")
        tp.add_argument("--data", help="csv path (features..., label)", default=None)
        tp.add_argument("--iterations", type=int, default=20)
        tp.add_argument("--batch-size", type=int, default=128 if name == "train-lr" else 8)
        tp.add_argument("--lr", type=float, default=0.01)
        tp.add_argument("--seed", type=int, default=0)
        tp.add_argument("--n", type=int, default=64)
        tp.add_argument("--f", type=int, default=14)
        tp.add_argument("--out")
        tp.set_defaults(fn=fn)

    rm = sub.add_parser("report-merge", help="merge per-party stats JSON files")
    rm.add_argument("reports", nargs="+")
    rm.add_argument("--out")
    rm.set_defaults(fn=cmd_report_merge)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except HandshakeError as e:
        print(f"handshake error: {e}", file=sys.stderr)
        return EXIT_HANDSHAKE
    except DesyncError as e:
        print(f"protocol desync: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    except TransportError as e:
        print(f"transport error: {e}", file=sys.stderr)
        return EXIT_TRANSPORT
    except Exception as e:  # noqa: BLE001
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
