"""Sentence-level training with and without the length curriculum, per seed.

    python scripts/curriculum.py -c scripts/configs/desk.json [key=value ...]

Writes ``<out_dir>/curriculum/curriculum.csv`` (final WER rows; run ids
``sentence:<curriculum|plain>:s<seed>``) and prints the per-seed comparison.
"""
import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

from vsrssl.harness.config import load_config
from vsrssl.harness.experiments import ensure_corpus, model_config, snapshot, corpus_lineage
from vsrssl.train import run_sentence_downstream, write_metrics_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-c", "--config")
    ap.add_argument("overrides", nargs="*")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    cfg = load_config(args.config, args.overrides, section="sentence")
    corpus = ensure_corpus(cfg)
    quantile = cfg.sentence.curriculum_quantile or 0.6
    rows, summary = [], {}
    for seed in cfg.seeds:
        for label, q in (("curriculum", quantile), ("plain", None)):
            plan = replace(cfg.sentence, seed=seed, curriculum=None, curriculum_quantile=q,
                           run_id=f"sentence:{label}:s{seed}")
            result = run_sentence_downstream(plan, corpus, model_config(cfg))
            rows.append(result.records[-1])
            summary.setdefault(seed, {})[label] = result.metrics["wer"]
    out = Path(cfg.out_dir) / "curriculum"
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "curriculum.csv", rows)
    snapshot(cfg, out, **corpus_lineage(corpus), seeds=cfg.seeds, quantile=quantile)
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
