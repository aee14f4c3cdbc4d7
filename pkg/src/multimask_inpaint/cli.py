"""Command line entry points, one verb per pipeline stage.

    mmi annotate --images DIR --out DIR
    mmi prepare-dataset --records FILE --images DIR --out DIR
    mmi train-promptgen --data DIR --out DIR
    mmi train-inpaint --data DIR --out DIR
    mmi suggest --data DIR --image IMG [--mask PNG | --bbox X0,Y0,X1,Y1] ...
    mmi inpaint --data DIR --image IMG --bbox ... --prompt TEXT ... --out PNG
    mmi evaluate --data DIR [--sweep-temperature 0,0.5,1.0] [--run-dir DIR]
    mmi serve --port 8080

All verbs accept --config FILE and --seed S; errors exit non-zero with a
JSON diagnostic on stderr.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .annotate import annotate_directory, audit_alignment, load_records
from .clients import MockEmbedder, MockGroundedCaptioner, MockObjectCaptioner
from .codec import build_instruction
from .config import (
    AppConfig,
    build_inpaint_backbone,
    build_promptgen_backbone,
    config_digest,
    load_config,
)
from .dataset import load_examples, mask_set_for_spec, prepare_dataset
from .inpaint import (
    InpaintJob,
    InpaintTrainConfig,
    SamplerConfig,
    make_training_example,
    run_job,
    train_inpainter,
)
from .masks import Mask, MaskSet, load_mask, render_overlay
from .metrics import (
    DiversitySample,
    RegionEvalItem,
    accuracy,
    diversity,
    fidelity_suite,
    plot_temperature_sweep,
    psnr,
    region_clip_sim,
    text_overlap,
    write_report,
)
from .promptgen import (
    GenerationConfig,
    PromptGenTrainConfig,
    assemble_example,
    generate_prompts,
    train_promptgen,
)


def _fail(message: str, code: int = 2):
    print(json.dumps({"error": message}), file=sys.stderr)
    raise SystemExit(code)


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, default=None, help="TOML config file")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")


def _load(args) -> AppConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    return config


def _parse_bbox(text: str):
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("bbox must be x0,y0,x1,y1")
    return tuple(parts)


def _collect_masks(args, image_size) -> MaskSet:
    masks = [load_mask(p) for p in (args.mask or [])]
    masks += [Mask.from_bbox(b, image_size) for b in (args.bbox or [])]
    if not masks:
        _fail("provide at least one --mask PNG or --bbox")
    return MaskSet(masks, image_size)


def _load_image(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def _backbones(args, config, need_promptgen=False, need_inpaint=False):
    specs, tokenizer, meta = load_examples(args.data)
    promptgen = inpainter = None
    if need_promptgen:
        promptgen = build_promptgen_backbone(tokenizer, config)
        if getattr(args, "promptgen_adapter", None):
            promptgen.load_adapter(args.promptgen_adapter)
    if need_inpaint:
        if meta["image_size"] != config.pipeline.image_size:
            config.pipeline.image_size = meta["image_size"]
        inpainter = build_inpaint_backbone(tokenizer, config)
        if getattr(args, "inpaint_adapter", None):
            inpainter.load_adapter(args.inpaint_adapter)
    return specs, tokenizer, meta, promptgen, inpainter


# --- verbs -----------------------------------------------------------------


def cmd_annotate(args):
    config = _load(args)
    embedder = MockEmbedder() if args.audit else None
    summary = annotate_directory(
        args.images, args.out, MockGroundedCaptioner(seed=config.seed),
        MockObjectCaptioner(seed=config.seed), embedder, workers=args.workers,
        min_frac=args.min_area, max_frac=args.max_area,
        token_cap=config.pipeline.caption_token_cap)
    if args.audit:
        summary["audit"] = audit_alignment(load_records(summary["records_path"]),
                                           embedder, args.images)
        (Path(args.out) / "audit.json").write_text(json.dumps(summary["audit"], indent=2))
    print(json.dumps(summary, indent=2))


def cmd_prepare_dataset(args):
    config = _load(args)
    meta = prepare_dataset(args.records, args.images, args.out,
                           image_size=args.image_size or config.pipeline.image_size,
                           seed=config.seed, n_max=config.pipeline.n_max,
                           area_cap=config.pipeline.total_area_cap,
                           min_frac=config.pipeline.min_area_frac,
                           max_frac=config.pipeline.max_area_frac,
                           palette=config.pipeline.palette)
    print(json.dumps(meta, indent=2))


def cmd_train_promptgen(args):
    config = _load(args)
    specs, tokenizer, meta, backbone, _ = _backbones(args, config, need_promptgen=True)
    pg = config.promptgen
    dataset = [assemble_example(_load_image(s.image_path),
                                mask_set_for_spec(s, meta["image_size"]),
                                s.prompts, config.pipeline.palette, s.seed, tokenizer)
               for s in specs]
    train_config = PromptGenTrainConfig(
        lora_rank=pg.lora_rank, lora_alpha=pg.lora_alpha, lora_dropout=pg.lora_dropout,
        lr=args.lr or pg.lr, warmup_fraction=pg.warmup_fraction, grad_clip=pg.grad_clip,
        batch_size=args.batch_size or pg.batch_size, epochs=args.epochs or pg.epochs,
        max_steps=args.steps, loss_reduction=pg.loss_reduction, seed=config.seed)
    result = train_promptgen(dataset, backbone, train_config, args.out)
    print(json.dumps({"artifact_dir": str(result.artifact_dir),
                      "initial_loss": result.initial_loss,
                      "final_loss": result.final_loss,
                      "steps": len(result.losses), "aborted": result.aborted}, indent=2))


def cmd_train_inpaint(args):
    config = _load(args)
    specs, tokenizer, meta, _, backbone = _backbones(args, config, need_inpaint=True)
    dataset = [make_training_example(_load_image(s.image_path).astype(np.float64) / 255.0,
                                     mask_set_for_spec(s, meta["image_size"]),
                                     s.prompts, backbone)
               for s in specs]
    ip = config.inpaint
    train_config = InpaintTrainConfig(
        lora_rank=ip.lora_rank, lora_alpha=ip.lora_alpha, lr=args.lr or ip.lr,
        warmup_fraction=ip.warmup_fraction, grad_clip=ip.grad_clip,
        batch_size=args.batch_size or ip.batch_size, text_drop=ip.text_drop,
        n_timesteps=ip.n_timesteps, epochs=args.epochs or ip.epochs,
        max_steps=args.steps, seed=config.seed)
    result = train_inpainter(dataset, backbone, train_config, args.out)
    print(json.dumps({"artifact_dir": str(result.artifact_dir),
                      "initial_loss": result.initial_loss,
                      "final_loss": result.final_loss,
                      "steps": len(result.losses), "aborted": result.aborted}, indent=2))


def cmd_suggest(args):
    config = _load(args)
    _, tokenizer, meta, backbone, _ = _backbones(args, config, need_promptgen=True)
    image = _load_image(args.image)
    mask_set = _collect_masks(args, image.shape[:2])
    overlay = render_overlay(image, mask_set, palette=config.pipeline.palette,
                             rng_seed=config.seed)
    colors = overlay.colors_in_mask_order()
    bundle = build_instruction(colors, overlay=overlay,
                               template_version=config.promptgen.template_version)
    gen = GenerationConfig(temperature=args.temperature, num_samples=args.num_samples,
                           max_new_tokens=config.promptgen.max_new_tokens,
                           seed=config.seed)
    results = generate_prompts(overlay, bundle, gen, backbone)
    print(json.dumps({
        "seed": config.seed, "config_hash": config_digest(config),
        "color_assignment": [{"mask_index": i, "color": c} for i, c in enumerate(colors)],
        "samples": [[{"color": p.color_name, "mask_index": p.mask_index,
                      "text": p.text, "status": r.statuses[p.color_name]}
                     for p in r.prompts] for r in results]}, indent=2))


def cmd_inpaint(args):
    config = _load(args)
    _, tokenizer, meta, _, backbone = _backbones(args, config, need_inpaint=True)
    image = _load_image(args.image)
    size = backbone.codec.image_size
    if image.shape[:2] != (size, size):
        _fail(f"image must be {size}x{size} for this model (got {image.shape[:2]})")
    mask_set = _collect_masks(args, image.shape[:2])
    prompts = args.prompt or []
    if len(prompts) != len(mask_set):
        _fail(f"{len(prompts)} prompts for {len(mask_set)} masks")
    job = InpaintJob(image=image, mask_set=mask_set, prompts=prompts,
                     sampler=SamplerConfig(steps=args.steps, guidance_weight=args.cfg,
                                           seed=config.seed,
                                           scheme=config.inpaint.scheme),
                     mode=args.mode, composite=not args.no_composite)
    run_job(job, backbone)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(job.result_image).save(out)
    manifest = {**job.manifest, "image": str(args.image), "output": str(out)}
    out.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
    print(json.dumps({"output": str(out), "manifest": manifest}, indent=2))


def _eval_items(specs, meta, backbone, config, temperature, num_samples, limit):
    """Greedy/sampled generations per example, parsed into eval items."""
    embedder = MockEmbedder()
    items, div_samples = [], []
    for spec in specs[:limit]:
        image = _load_image(spec.image_path)
        mask_set = mask_set_for_spec(spec, meta["image_size"])
        overlay = render_overlay(image, mask_set, palette=config.pipeline.palette,
                                 rng_seed=spec.seed)
        bundle = build_instruction(overlay.colors_in_mask_order(), overlay=overlay)
        gen = GenerationConfig(temperature=temperature, num_samples=num_samples,
                               max_new_tokens=config.promptgen.max_new_tokens,
                               seed=spec.seed)
        results = generate_prompts(overlay, bundle, gen, backbone)
        image01 = image.astype(np.float64) / 255.0
        for k in range(len(mask_set)):
            generated = results[0].prompts[k].text
            item = RegionEvalItem(generated_prompt=generated,
                                  reference_prompt=spec.prompts[k],
                                  noun_root=spec.roots[k],
                                  mask=mask_set.masks[k].grid,
                                  source_image=image01, result_image=image01)
            items.append(item)
        div_samples.append(DiversitySample(
            example_id=spec.image_id,
            samples=[" ".join(p.text for p in r.prompts if p.text) or "empty"
                     for r in results]))
    return items, div_samples, embedder


def cmd_evaluate(args):
    config = _load(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report: dict = {"config_hash": config_digest(config), "seed": config.seed}

    if args.run_dir:
        class PsnrScorer:
            def score(self, records):
                values = []
                for r in records:
                    result_path = Path(r["_path"]).with_suffix(".png")
                    source_path = r.get("image")
                    if not result_path.exists() or not source_path:
                        continue
                    a = _load_image(result_path).astype(np.float64) / 255.0
                    b = _load_image(Path(source_path)).astype(np.float64) / 255.0
                    values.append(psnr(a, b))
                return float(np.mean(values)) if values else float("nan")

        fidelity = fidelity_suite(args.run_dir, {"psnr": PsnrScorer()})
        report["fidelity"] = fidelity
        write_report(fidelity, out_dir)

    if args.data:
        specs, tokenizer, meta, backbone, _ = _backbones(args, config,
                                                         need_promptgen=True)
        items, div_samples, embedder = _eval_items(
            specs, meta, backbone, config, args.temperature, args.num_samples,
            args.limit)
        sims = [region_clip_sim(i, embedder, mode="t2i") for i in items
                if i.generated_prompt.strip()]
        report["promptgen"] = {
            "accuracy": accuracy(items), **text_overlap(items),
            **diversity(div_samples),
            "clip_sim": float(np.mean(sims)) if sims else None,
            "n_items": len(items)}

        if args.sweep_temperature:
            temps = [float(t) for t in args.sweep_temperature.split(",")]
            rows = []
            for temp in temps:
                t_items, t_samples, _ = _eval_items(specs, meta, backbone, config,
                                                    temp, args.num_samples, args.limit)
                row = {"temperature": temp, **diversity(t_samples)}
                sims_t = [region_clip_sim(i, embedder, mode="t2i", scale=2.5)
                          for i in t_items if i.generated_prompt.strip()]
                row["clip_sim_scaled"] = float(np.mean(sims_t)) if sims_t else None
                rows.append(row)
            report["temperature_sweep"] = rows
            with open(out_dir / "sweep.csv", "w") as fh:
                fh.write("temperature,distinct1,distinct2,self_bleu,clip_sim_scaled\n")
                for r in rows:
                    fh.write(f"{r['temperature']},{r['distinct1']:.4f},"
                             f"{r['distinct2']:.4f},{(r['self_bleu'] or 0):.4f},"
                             f"{(r.get('clip_sim_scaled') or 0):.4f}\n")
            plot_temperature_sweep(rows, out_dir / "sweep.png")

    (out_dir / "evaluation.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))


def cmd_serve(args):
    import uvicorn

    from .service import ServiceState, create_app

    config = _load(args)
    promptgen = inpainter = None
    if args.data:
        specs, tokenizer, meta, promptgen, inpainter = _backbones(
            args, config, need_promptgen=True, need_inpaint=True)
    state = ServiceState(config, promptgen, inpainter,
                         artifacts_dir=args.artifacts)
    app = create_app(state)
    uvicorn.run(app, host=args.host or config.service.host,
                port=args.port or config.service.port, log_level="info")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmi",
                                     description="text-guided multi-mask inpainting toolkit")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("annotate", help="object-level annotation with model clients")
    _common(p)
    p.add_argument("--images", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--min-area", type=float, default=0.01)
    p.add_argument("--max-area", type=float, default=0.65)
    p.add_argument("--audit", action="store_true", help="embedder alignment audit")
    p.set_defaults(fn=cmd_annotate)

    p = sub.add_parser("prepare-dataset", help="records -> training examples")
    _common(p)
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--images", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--image-size", type=int, default=None)
    p.set_defaults(fn=cmd_prepare_dataset)

    for name, fn in (("train-promptgen", cmd_train_promptgen),
                     ("train-inpaint", cmd_train_inpaint)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} adapter")
        _common(p)
        p.add_argument("--data", type=Path, required=True, help="prepared dataset dir")
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.set_defaults(fn=fn)

    p = sub.add_parser("suggest", help="prompt suggestions for masked regions")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--promptgen-adapter", type=Path, default=None)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--mask", type=Path, action="append")
    p.add_argument("--bbox", type=_parse_bbox, action="append")
    p.add_argument("--temperature", type=float, default=0.5)
    p.add_argument("--num-samples", type=int, default=4)
    p.set_defaults(fn=cmd_suggest)

    p = sub.add_parser("inpaint", help="multi-mask inpainting")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--inpaint-adapter", type=Path, default=None)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--mask", type=Path, action="append")
    p.add_argument("--bbox", type=_parse_bbox, action="append")
    p.add_argument("--prompt", action="append")
    p.add_argument("--mode", default="rca", choices=["rca", "concat", "repeated"])
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--cfg", type=float, default=7.5)
    p.add_argument("--no-composite", action="store_true")
    p.add_argument("--out", type=Path, default=Path("inpainted.png"))
    p.set_defaults(fn=cmd_inpaint)

    p = sub.add_parser("evaluate", help="metrics report and temperature sweep")
    _common(p)
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--promptgen-adapter", type=Path, default=None)
    p.add_argument("--run-dir", type=Path, default=None, help="inpaint results dir")
    p.add_argument("--out", type=Path, default=Path("eval_out"))
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--num-samples", type=int, default=4)
    p.add_argument("--limit", type=int, default=16)
    p.add_argument("--sweep-temperature", default=None,
                   help="comma-separated temperatures, e.g. 0,0.25,0.5,0.75,1.0")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP service")
    _common(p)
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--promptgen-adapter", type=Path, default=None)
    p.add_argument("--inpaint-adapter", type=Path, default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--artifacts", type=Path, default=Path("artifacts"))
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except SystemExit:
        raise
    except Exception as exc:
        _fail(f"{type(exc).__name__}: {exc}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
