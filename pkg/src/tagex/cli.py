"""Command-line entry points for experiments and the annotation service.

All outputs (metrics, curves, corpora, checkpoints) are deterministic
functions of their inputs and seeds: re-running a command with the same
seed produces byte-identical files.
"""

from __future__ import annotations

import json
import os
from dataclasses import replace

import click

from . import active as active_mod
from . import attention as attn_mod
from . import corpus as corpus_mod
from . import trainer as trainer_mod
from .errors import TagexError

SCHEME_CHOICES = ("BIOE", "UBIOE", "IOB")


def _fail(exc):
    raise click.ClickException(str(exc))


def _load_model_config(config_path, **overrides):
    obj = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    obj.update({k: v for k, v in overrides.items() if v is not None})
    return trainer_mod.ModelConfig.from_json(obj)


def _samples_for(profiles, ids=None):
    if ids is not None:
        profiles = corpus_mod.select(profiles, ids)
    return [p.to_sample() for p in profiles]


def _echo_report(report, last_k_note=None):
    click.echo(f"{'attribute':<12} {'precision':>9} {'recall':>9} {'f1':>9}")
    for attr, m in report.per_attribute.items():
        click.echo(f"{attr:<12} {m.precision:9.4f} {m.recall:9.4f} {m.f1:9.4f}")
    m = report.micro
    click.echo(f"{'micro':<12} {m.precision:9.4f} {m.recall:9.4f} {m.f1:9.4f}")
    if last_k_note:
        click.echo(last_k_note)


@click.group()
def main():
    """Attribute-value extraction by sequence tagging."""


@main.command()
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True), help="training corpus (JSONL)")
@click.option("--eval-corpus", "eval_path", type=click.Path(exists=True),
              help="held-out eval corpus; defaults to the training corpus")
@click.option("--variant", type=click.Choice(trainer_mod.VARIANTS),
              default=None)
@click.option("--scheme", type=click.Choice(SCHEME_CHOICES), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON file with model-config overrides")
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True,
              help="checkpoint output path")
def train(corpus_path, eval_path, variant, scheme, config_path, epochs, seed,
          out_path):
    """Train a tagger; writes OUT and OUT.metrics.jsonl."""
    try:
        config = _load_model_config(config_path, variant=variant,
                                    scheme_kind=scheme, epochs=epochs,
                                    seed=seed)
        profiles = corpus_mod.load_corpus(corpus_path)
        samples = _samples_for(profiles)
        eval_samples = None
        if eval_path:
            eval_samples = _samples_for(corpus_mod.load_corpus(eval_path))
        model, history = trainer_mod.train(samples, config, eval_samples)
        trainer_mod.save_checkpoint(model, out_path)
        history.to_jsonl(out_path + ".metrics.jsonl")
    except TagexError as exc:
        _fail(exc)
    avg = history.last_k(model.config.last_k_average)
    click.echo(f"trained {model.config.variant} for {len(history)} epochs")
    click.echo(
        f"last-{model.config.last_k_average} avg: "
        f"P {avg['precision']:.4f} R {avg['recall']:.4f} F {avg['f1']:.4f}")


@main.command()
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True))
@click.option("--split", "split_kind",
              type=click.Choice(["none", "random", "disjoint"]),
              default="none", help="evaluate on the test side of this split")
@click.option("--ratio", type=float, default=0.5, help="train share of the split")
@click.option("--seed", type=int, default=0)
@click.option("--history", "history_path", type=click.Path(exists=True),
              help="metrics history for last-k averaging")
@click.option("--out", "out_path", default=None, help="optional JSON report path")
def evaluate(ckpt_path, corpus_path, split_kind, ratio, seed, history_path,
             out_path):
    """Report extraction P/R/F of a checkpoint on a corpus."""
    try:
        model = trainer_mod.load_checkpoint(ckpt_path)
        profiles = corpus_mod.load_corpus(corpus_path)
        if split_kind != "none":
            split = corpus_mod.split(profiles, split_kind, ratio=ratio, seed=seed)
            profiles = corpus_mod.select(profiles, split.test_ids)
        samples = _samples_for(profiles)
        extra = {a for s in samples for a in s.spans}
        missing = extra - set(model.scheme.attributes)
        if missing:
            _fail(f"corpus attributes {sorted(missing)} not in checkpoint scheme")
        report = trainer_mod.evaluate_model(model, samples)
    except TagexError as exc:
        _fail(exc)
    note = None
    if history_path:
        history = trainer_mod.MetricHistory.from_jsonl(history_path)
        k = model.config.last_k_average
        avg = history.last_k(k)
        note = (f"last-{k} epoch avg: P {avg['precision']:.4f} "
                f"R {avg['recall']:.4f} F {avg['f1']:.4f}")
    _echo_report(report, note)
    if out_path:
        payload = {
            "version": "v1",
            "micro": report.micro.as_dict(),
            "per_attribute": {a: m.as_dict()
                              for a, m in report.per_attribute.items()},
        }
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)


@main.command("active-sim")
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True))
@click.option("--strategy", type=click.Choice(active_mod.STRATEGIES),
              default="TF")
@click.option("--seeds", type=int, default=1, help="number of seeded repeats")
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON model-config overrides")
@click.option("--initial", type=int, default=50, help="initial labeled size")
@click.option("--batch", "query_batch", type=int, default=20,
              help="labels requested per round")
@click.option("--rounds", type=int, default=20)
@click.option("--committee-epochs", type=int, default=5)
@click.option("--out", "out_dir", required=True, type=click.Path())
def active_sim(corpus_path, strategy, seeds, config_path, initial, query_batch,
               rounds, committee_epochs, out_dir):
    """Simulate active learning with the gold oracle; writes learning curves.

    Pool/held-out assignment comes from the corpus' sidecar split file
    (CORPUS.split.json) when present, otherwise a seeded 2:1 random split.
    """
    try:
        profiles = corpus_mod.load_corpus(corpus_path)
        sidecar = corpus_path + ".split.json"
        if os.path.exists(sidecar):
            with open(sidecar, "r", encoding="utf-8") as fh:
                sides = json.load(fh)
            pool_ids, eval_ids = sides["train_ids"], sides["test_ids"]
        else:
            split = corpus_mod.split(profiles, "random", ratio=2 / 3, seed=0)
            pool_ids, eval_ids = split.train_ids, split.test_ids
        pool = _samples_for(profiles, pool_ids)
        held_out = _samples_for(profiles, eval_ids)
        config = _load_model_config(config_path)
        if not config.attributes:
            attrs = sorted({a for s in pool for a in s.spans})
            config = replace(config, attributes=tuple(attrs))
        al_config = active_mod.ALConfig(
            strategy=strategy, initial_labeled=initial,
            query_batch=query_batch, rounds=rounds,
            committee_epochs=committee_epochs)
        os.makedirs(out_dir, exist_ok=True)
        curve_path = os.path.join(out_dir, f"curves-{strategy}.jsonl")
        summary = []
        with open(curve_path, "w", encoding="utf-8") as fh:
            for seed in range(seeds):
                run = active_mod.run_simulation(pool, held_out, config,
                                                al_config, seed=seed)
                for record in run.state.history:
                    row = {"seed": seed, "strategy": strategy, **record}
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
                final = run.state.history[-1]["post_round_metrics"]
                summary.append({"seed": seed,
                                "final_f1": final["f1"] if final else None,
                                "labeled": len(run.state.labeled_ids)})
        with open(os.path.join(out_dir, f"summary-{strategy}.json"), "w",
                  encoding="utf-8") as fh:
            json.dump({"version": "v1", "strategy": strategy,
                       "runs": summary}, fh, sort_keys=True)
    except TagexError as exc:
        _fail(exc)
    click.echo(f"wrote {curve_path}")


@main.command("attention-export")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--text", required=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def attention_export(ckpt_path, text, out_dir):
    """Export the pair-score heatmap for one input as CSV + JSON."""
    try:
        model = trainer_mod.load_checkpoint(ckpt_path)
        prediction = trainer_mod.predict(model, text)
        if prediction.attention is None:
            _fail(f"variant {model.config.variant!r} produces no attention "
                  f"matrix; train an attention model")
        os.makedirs(out_dir, exist_ok=True)
        base = os.path.join(out_dir, "heatmap")
        csv_path, json_path = attn_mod.export_heatmap(
            prediction.attention, prediction.tokens, base)
    except TagexError as exc:
        _fail(exc)
    click.echo(f"wrote {csv_path} and {json_path}")
    for attr, values in sorted(prediction.extraction.items()):
        if values:
            click.echo(f"{attr}: {', '.join(sorted(values))}")


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True),
              help="generator spec JSON; omit for the built-in recipe")
@click.option("--samples", type=int, default=None,
              help="override the spec's sample count")
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_path", required=True)
def synth(spec_path, samples, seed, out_path):
    """Generate a synthetic annotated corpus; writes OUT and OUT.split.json."""
    try:
        if spec_path:
            with open(spec_path, "r", encoding="utf-8") as fh:
                spec = corpus_mod.SyntheticSpec.from_json(json.load(fh))
        else:
            spec = corpus_mod.default_synthetic_spec()
        if samples is not None:
            spec.sample_count = samples
        generated = corpus_mod.generate_synthetic(spec, seed=seed)
        corpus_mod.save_corpus(generated.profiles, out_path)
        with open(out_path + ".split.json", "w", encoding="utf-8") as fh:
            json.dump({"version": "v1",
                       "train_ids": generated.train_ids,
                       "test_ids": generated.test_ids,
                       "reserved": {a: sorted(v)
                                    for a, v in generated.reserved.items()}},
                      fh, sort_keys=True)
    except TagexError as exc:
        _fail(exc)
    click.echo(f"wrote {len(generated.profiles)} profiles to {out_path}")


@main.command()
@click.option("--port", type=int, default=8000)
@click.option("--host", default="127.0.0.1")
@click.option("--store", "store_dir", required=True, type=click.Path())
def serve(port, host, store_dir):
    """Run the human-in-the-loop annotation service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(store_dir), host=host, port=port)


if __name__ == "__main__":
    main()
