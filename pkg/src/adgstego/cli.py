"""Command-line surface wiring corpus -> LM -> codec -> metrics pipelines.

Every randomized stage takes its seed from one config block, and the
seeds are echoed into output headers, so two runs with identical configs
produce byte-identical artifacts.  Data goes to files, logs to stderr.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import random
import sys
from typing import Dict, List, Optional, Sequence

import yaml

from . import adg, baselines, bundled, corpus, lm, metrics, runner
from .bitio import bits_to_bytes, deframe, frame, hex_to_bits
from .errors import ConfigError, DesyncError, StegoError

log = logging.getLogger("adgstego")

DEFAULT_CONFIG: Dict = {
    "preprocess": {
        "min_len": 5,
        "max_len": 200,
        "docs_per_line": True,
        "min_count": 10,
        "split_ratio": 0.9,
    },
    "lm": {"order": 2, "k": 0.5},
    "codec": {
        "method": "adg",
        "b": 3,
        "k": 3,
        "delta": 1.0,
        "h": 100,
        "precision": 52,
        "min_len": 5,
        "max_len": 200,
        "max_tokens": 1_000_000,
        "max_sentences": 100_000,
    },
    "seeds": {
        "split": 0,
        "sample": 1,
        "pad": 2,
        "partition": 3,
        "payload": 4,
        "cover": 5,
        "vector": 0,
    },
    "bench": {
        "n_sentences": 500,
        "payload_bits": 64,
        "vector_dim": 100,
        "methods": [
            {"method": "bins", "b": 5},
            {"method": "huffman", "k": 5},
            {"method": "patient_huffman", "k": 3, "delta": 1.0},
            {"method": "arithmetic", "h": 300},
            {"method": "adg"},
        ],
    },
}


def _merge(base: Dict, override: Dict, path: str = "") -> Dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        key_path = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {key_path}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key_path} must be a mapping")
            out[key] = _merge(base[key], value, key_path)
        else:
            out[key] = value
    return out


def load_config(path: Optional[str], overrides: Sequence[str]) -> Dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} is not a mapping")
        cfg = _merge(cfg, loaded)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node: Dict = {}
        leaf = node
        keys = dotted.split(".")
        for key in keys[:-1]:
            leaf[key] = {}
            leaf = leaf[key]
        leaf[keys[-1]] = value
        cfg = _merge(cfg, node)
    return cfg


def _generation_config(cfg: Dict) -> runner.GenerationConfig:
    codec = cfg["codec"]
    return runner.GenerationConfig(
        min_len=int(codec["min_len"]),
        max_len=int(codec["max_len"]),
        max_tokens=int(codec["max_tokens"]),
        max_sentences=int(codec["max_sentences"]),
        sample_seed=int(cfg["seeds"]["sample"]),
        pad_seed=int(cfg["seeds"]["pad"]),
    )


def _codec_from_config(spec: Dict, cfg: Dict, vocab_size: int):
    params = {k: v for k, v in spec.items() if k != "method"}
    params.setdefault("partition_seed", cfg["seeds"]["partition"])
    return baselines.make_codec(spec["method"], vocab_size, **params)


def _load_model(model_path: str, vocab_path: str):
    vocab = corpus.Vocabulary.load(vocab_path)
    model = lm.NGramLM.load(model_path, vocab)
    return model, vocab


def cmd_preprocess(args, cfg: Dict) -> None:
    pp = cfg["preprocess"]
    with open(args.input, encoding="utf-8") as fh:
        raw = fh.read()
    sentences = corpus.preprocess(
        raw,
        corpus.PreprocessConfig(
            min_len=int(pp["min_len"]),
            max_len=int(pp["max_len"]),
            docs_per_line=bool(pp["docs_per_line"]),
        ),
    )
    vocab = corpus.build_vocab(sentences, min_count=int(pp["min_count"]))
    train, test = corpus.split(sentences, float(pp["split_ratio"]), int(cfg["seeds"]["split"]))
    corpus.write_corpus(args.out_train, train)
    corpus.write_corpus(args.out_test, test)
    vocab.save(args.out_vocab)
    log.info(
        "preprocessed %d sentences (train=%d test=%d vocab=%d)",
        len(sentences), len(train), len(test), len(vocab),
    )


def cmd_train(args, cfg: Dict) -> None:
    vocab = corpus.Vocabulary.load(args.vocab)
    sentences = [vocab.encode_sentence(s) for s in corpus.read_corpus(args.corpus)]
    model = lm.train_ngram(sentences, int(cfg["lm"]["order"]), float(cfg["lm"]["k"]), vocab)
    model.save(args.out)
    log.info("trained order-%d model over %d sentences", model.order, len(sentences))


def _read_payload(args) -> bytes:
    if args.hex is not None:
        return bits_to_bytes(hex_to_bits(args.hex))
    with open(args.input, "rb") as fh:
        return fh.read()


def cmd_embed(args, cfg: Dict) -> None:
    model, vocab = _load_model(args.model, args.vocab)
    codec = _codec_from_config(cfg["codec"], cfg, len(vocab))
    msg = frame(_read_payload(args))
    gen_cfg = _generation_config(cfg)
    gen_cfg.collect_stats = bool(args.out_trace)
    sentences, trace = runner.embed_text(codec, msg, model, gen_cfg)
    corpus.write_corpus(args.out_stego, (vocab.decode(s) for s in sentences))
    if args.out_trace:
        trace.params["seeds"] = dict(cfg["seeds"])
        trace.save(args.out_trace)
    log.info(
        "embedded %d payload bits into %d sentences / %d tokens",
        trace.payload_bits, len(sentences), trace.total_tokens,
    )


def cmd_extract(args, cfg: Dict) -> None:
    model, vocab = _load_model(args.model, args.vocab)
    codec = _codec_from_config(cfg["codec"], cfg, len(vocab))
    sentences = []
    for surface in corpus.read_corpus(args.stego):
        try:
            sentences.append([vocab.encode_token_strict(t) for t in surface])
        except KeyError as exc:
            raise DesyncError(f"stegotext token {exc.args[0]!r} not in the vocabulary") from exc
    bits = runner.extract_text(codec, sentences, model, _generation_config(cfg))
    payload = bits_to_bytes(deframe(bits))
    if args.hex_out:
        print(payload.hex())
    else:
        with open(args.output, "wb") as fh:
            fh.write(payload)
    log.info("recovered %d payload bytes", len(payload))


def _bench_cell(model, vocab, cfg: Dict, spec: Dict, cover: List[List[str]]):
    bench = cfg["bench"]
    seeds = cfg["seeds"]
    gen_cfg = _generation_config(cfg)
    gen_cfg.collect_stats = True
    cell_key = json.dumps(spec, sort_keys=True)
    digest = hashlib.sha256(f"{seeds['payload']}:{cell_key}".encode("utf-8")).digest()
    payload_rng = random.Random(int.from_bytes(digest[:8], "big"))
    codec = _codec_from_config(spec, cfg, len(vocab))
    provider = runner.CachedProvider(model)
    traces, stego_sentences = [], []
    message_index = 0
    while len(stego_sentences) < int(bench["n_sentences"]):
        payload = bytes(
            payload_rng.getrandbits(8) for _ in range(int(bench["payload_bits"]) // 8)
        )
        gen_cfg.sample_seed = int(seeds["sample"]) + message_index
        gen_cfg.pad_seed = int(seeds["pad"]) + message_index
        sentences, trace = runner.embed_text(codec, frame(payload), provider, gen_cfg)
        traces.append(trace)
        stego_sentences.extend(vocab.decode(s) for s in sentences)
        message_index += 1
    stego_sentences = stego_sentences[: int(bench["n_sentences"])]
    report = metrics.report_from_traces(
        traces,
        stego_sentences=stego_sentences,
        cover_sentences=cover[: len(stego_sentences)],
        vector_dim=int(bench["vector_dim"]),
        vector_seed=int(seeds["vector"]),
    )
    return report


def cmd_bench(args, cfg: Dict) -> None:
    model, vocab = _load_model(args.model, args.vocab)
    test_sentences = corpus.read_corpus(args.corpus)
    cover_rng = random.Random(int(cfg["seeds"]["cover"]))
    cover = list(test_sentences)
    cover_rng.shuffle(cover)
    rows = []
    for spec in cfg["bench"]["methods"]:
        log.info("bench cell: %s", json.dumps(spec, sort_keys=True))
        report = _bench_cell(model, vocab, cfg, spec, cover)
        rows.append(report)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("# seeds=" + json.dumps(cfg["seeds"], sort_keys=True) + "\n")
        fh.write("# vectorizer=" + metrics.VECTORIZER_ID + "\n")
        fh.write(
            "method,params,er,er_payload_only,kld1_qp,kld1_pq,kld2,entropy,sentences,tokens\n"
        )
        for r in rows:
            params = json.dumps(r.params, sort_keys=True).replace('"', "'")
            pq = f"{r.kld1_pq:.6f}" if r.kld1_pq is not None else "inf"
            ent = f"{r.entropy:.6f}" if r.entropy is not None else ""
            fh.write(
                f"{r.method},\"{params}\",{r.er:.6f},{r.er_payload_only:.6f},"
                f"{r.kld1_qp:.6f},{pq},{r.kld2:.6f},{ent},{r.sentences},{r.tokens}\n"
            )
    log.info("wrote %d bench rows to %s", len(rows), args.out)


def cmd_metrics(args, cfg: Dict) -> None:
    trace = runner.EmbedTrace.load(args.trace)
    stego = corpus.read_corpus(args.stego) if args.stego else None
    cover = corpus.read_corpus(args.cover) if args.cover else None
    report = metrics.report_from_traces(
        [trace],
        stego_sentences=stego,
        cover_sentences=cover[: len(stego)] if (cover and stego) else None,
        acc=args.acc,
        vector_dim=int(cfg["bench"]["vector_dim"]),
        vector_seed=int(cfg["seeds"]["vector"]),
    )
    out = {
        "method": report.method,
        "params": report.params,
        "er": report.er,
        "er_payload_only": report.er_payload_only,
        "kld1_qp": report.kld1_qp,
        "kld1_pq": report.kld1_pq,
        "kld2": report.kld2,
        "eer": report.eer,
        "entropy": report.entropy,
        "tokens": report.tokens,
        "vectorizer": report.vectorizer,
        "vectorizer_seed": report.vectorizer_seed,
    }
    text = json.dumps(out, sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adgstego", description=__doc__)
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides",
        help="override a config key, e.g. --set codec.method=huffman",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="tokenize raw text, build vocab, split")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)
    p.add_argument("--out-vocab", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the built-in n-gram model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed a payload into stegotext")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--in", dest="input", help="payload file")
    group.add_argument("--hex", help="payload as a hex string")
    p.add_argument("--out-stego", required=True)
    p.add_argument("--out-trace")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="recover a payload from stegotext")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--stego", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--out", dest="output", help="payload output file")
    group.add_argument("--hex-out", action="store_true", help="print payload as hex")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("bench", help="run the method grid and emit a metric CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True, help="test split for covertext sampling")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("metrics", help="compute a metric report from artifacts")
    p.add_argument("--trace", required=True)
    p.add_argument("--stego")
    p.add_argument("--cover")
    p.add_argument("--acc", type=float, help="external steganalysis accuracy")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("toy-corpus", help="print the bundled toy corpus path")
    p.set_defaults(func=lambda args, cfg: print(bundled.toy_corpus_path()))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config, args.overrides)
        args.func(args, cfg)
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc.filename or exc)
        return 1
    except StegoError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
