"""Evaluation suite: prompt plausibility, text overlap, diversity, fidelity,
and region-aligned image-text similarity.

Text scores are sentence-level and averaged over items, reported on a
0-100 scale except Distinct-N (0-1). BLEU uses additive smoothing
(epsilon replaces zero match counts) and drops n-gram orders for which the
candidate has no n-grams at all, so identical short sentences still score
100 at order 4. ROUGE-L is the LCS F1.
"""

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

log = logging.getLogger(__name__)

BLEU_SMOOTHING_EPS = 0.1
# region treatment defaults: darken factor and blur sigma as a fraction of
# the longer image side; recorded in every report that uses them
DARKEN_BETA = 0.5
BLUR_SIGMA_FRAC = 0.02
CLIP_ALIGNMENT_THRESHOLD = 0.28

_WORD_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


@dataclass
class RegionEvalItem:
    generated_prompt: str
    reference_prompt: str = ""
    noun_root: str | None = None
    mask: np.ndarray | None = None
    source_image: np.ndarray | None = None
    result_image: np.ndarray | None = None


@dataclass
class DiversitySample:
    example_id: str
    samples: list[str]


# --- plausibility ------------------------------------------------------------

def accuracy(items: list[RegionEvalItem]) -> float:
    """Percent of items whose noun root appears as a whole word in the prompt."""
    hits, scored, skipped = 0, 0, 0
    for item in items:
        if not item.noun_root:
            skipped += 1
            continue
        scored += 1
        pattern = rf"\b{re.escape(item.noun_root.lower())}\b"
        if re.search(pattern, item.generated_prompt.lower()):
            hits += 1
    if skipped:
        log.warning("accuracy skipped %d items without a noun root", skipped)
    return 100.0 * hits / scored if scored else 0.0


# --- n-gram machinery ----------------------------------------------------------

def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: list[str], references: list[list[str]], max_order: int = 4,
         eps: float = BLEU_SMOOTHING_EPS) -> float:
    """Sentence BLEU in [0, 1] with clipped counts and epsilon smoothing.

    Orders where the candidate has no n-grams are excluded from the
    geometric mean; zero match counts are replaced by eps.
    """
    if not candidate or not references:
        return 0.0
    log_precisions = []
    for n in range(1, max_order + 1):
        cand_counts = _ngrams(candidate, n)
        total = sum(cand_counts.values())
        if total == 0:
            continue
        max_ref = Counter()
        for ref in references:
            for gram, count in _ngrams(ref, n).items():
                max_ref[gram] = max(max_ref[gram], count)
        matched = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        p = matched / total if matched > 0 else eps / total
        log_precisions.append(math.log(p))
    if not log_precisions:
        return 0.0
    c = len(candidate)
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(sum(log_precisions) / len(log_precisions))


def _lcs_len(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> float:
    """LCS-based F1 in [0, 1]."""
    if not candidate or not reference:
        return 0.0
    lcs = _lcs_len(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


def text_overlap(items: list[RegionEvalItem]) -> dict[str, float]:
    """Mean sentence-level BLEU@1, BLEU@4, and ROUGE-L, 0-100."""
    if not items:
        raise ValueError("no items to score")
    b1, b4, rl = [], [], []
    for item in items:
        cand = tokenize(item.generated_prompt)
        ref = tokenize(item.reference_prompt)
        b1.append(bleu(cand, [ref], max_order=1))
        b4.append(bleu(cand, [ref], max_order=4))
        rl.append(rouge_l(cand, ref))
    return {"bleu1": 100.0 * float(np.mean(b1)),
            "bleu4": 100.0 * float(np.mean(b4)),
            "rougeL": 100.0 * float(np.mean(rl))}


# --- diversity -----------------------------------------------------------------

def distinct_n(samples: list[str], n: int) -> float:
    """Unique n-grams over total n-grams, pooled across the samples."""
    pooled = Counter()
    for s in samples:
        pooled.update(_ngrams(tokenize(s), n))
    total = sum(pooled.values())
    return len(pooled) / total if total else 0.0


def diversity(samples: list[DiversitySample]) -> dict[str, float | None]:
    """Distinct-1/2 averaged per example, plus Self-BLEU across samples.

    Sample counts must be uniform across examples; Self-BLEU needs at
    least two samples and is None otherwise.
    """
    if not samples:
        raise ValueError("no diversity samples")
    counts = {len(s.samples) for s in samples}
    if len(counts) != 1:
        raise ValueError(f"sample counts differ across examples: {sorted(counts)}")
    per_example = counts.pop()
    d1 = float(np.mean([distinct_n(s.samples, 1) for s in samples]))
    d2 = float(np.mean([distinct_n(s.samples, 2) for s in samples]))
    self_bleu = None
    if per_example >= 2:
        scores = []
        for s in samples:
            toks = [tokenize(x) for x in s.samples]
            for i in range(len(toks)):
                others = toks[:i] + toks[i + 1:]
                scores.append(bleu(toks[i], others))
        self_bleu = 100.0 * float(np.mean(scores))
    return {"distinct1": d1, "distinct2": d2, "self_bleu": self_bleu}


# --- region-aligned image-text similarity ----------------------------------------

def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def treat_background(image01: np.ndarray, mask: np.ndarray,
                     darken: float = DARKEN_BETA,
                     blur_frac: float = BLUR_SIGMA_FRAC) -> np.ndarray:
    """Darken and blur everything outside the mask; inside stays untouched."""
    mask3 = mask.astype(bool)[:, :, None]
    if mask3.all():
        return image01
    sigma = blur_frac * max(image01.shape[:2])
    background = gaussian_filter(image01 * darken, sigma=(sigma, sigma, 0))
    return np.where(mask3, image01, background)


def _mask_bbox_crop(image01: np.ndarray, mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return image01
    return image01[ys.min():ys.max() + 1, xs.min():xs.max() + 1]


def region_clip_sim(item: RegionEvalItem, embedder, mode: str = "t2i",
                    darken: float = DARKEN_BETA, blur_frac: float = BLUR_SIGMA_FRAC,
                    scale: float = 1.0) -> float | None:
    """Cosine similarity focused on the masked region.

    t2i compares the prompt embedding against the treated result image;
    i2i compares the treated source crop against the treated result.
    Returns None (metric absent) when no embedder is configured.
    """
    if embedder is None:
        return None
    if item.mask is None or item.result_image is None:
        raise ValueError("region_clip_sim needs mask and result_image")
    treated_result = treat_background(item.result_image, item.mask, darken, blur_frac)
    if mode == "t2i":
        sim = cosine(embedder.embed_text(item.generated_prompt),
                     embedder.embed_image(treated_result))
    elif mode == "i2i":
        if item.source_image is None:
            raise ValueError("i2i needs source_image")
        treated_source = treat_background(item.source_image, item.mask, darken, blur_frac)
        sim = cosine(embedder.embed_image(_mask_bbox_crop(treated_source, item.mask)),
                     embedder.embed_image(treated_result))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return scale * sim


# --- fidelity ----------------------------------------------------------------------

def psnr(result: np.ndarray, reference: np.ndarray,
         mask: np.ndarray | None = None) -> float:
    """Peak signal-to-noise ratio in dB for [0,1] images, capped at 100."""
    if result.shape != reference.shape:
        raise ValueError(f"shape mismatch {result.shape} vs {reference.shape}")
    diff = (np.asarray(result, dtype=np.float64) - np.asarray(reference, dtype=np.float64)) ** 2
    if mask is not None:
        sel = mask.astype(bool)
        if not sel.any():
            raise ValueError("empty mask for masked psnr")
        mse = float(diff[sel].mean())
    else:
        mse = float(diff.mean())
    if mse == 0.0:
        return 100.0
    return min(100.0, 10.0 * math.log10(1.0 / mse))


def fidelity_suite(run_dir: str | Path, scorer_clients: dict) -> dict:
    """Batch job results through pluggable scorers; absent scorers become
    absent columns. Reports the full set and the multi-mask (n >= 2) slice."""
    run_dir = Path(run_dir)
    manifests = sorted(run_dir.glob("*.json"))
    records = []
    for path in manifests:
        data = json.loads(path.read_text())
        if "n_masks" in data:
            data["_path"] = str(path)
            records.append(data)
    if not records:
        raise ValueError(f"no results in {run_dir}")
    multi = [r for r in records if r.get("n_masks", 0) >= 2]
    report: dict = {"n_results": len(records), "n_multi_mask": len(multi), "metrics": {}}
    for name, client in scorer_clients.items():
        if client is None:
            log.warning("scorer %s absent; column omitted", name)
            continue
        entry = {"full": float(client.score(records))}
        entry["multi_mask"] = float(client.score(multi)) if multi else None
        report["metrics"][name] = entry
    return report


def write_report(report: dict, out_dir: str | Path) -> Path:
    """Report as JSON plus a CSV in Table-style columns (full, multi-mask)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2))
    lines = ["metric,full,multi_mask"]
    for name, entry in report.get("metrics", {}).items():
        multi = "" if entry.get("multi_mask") is None else f"{entry['multi_mask']:.4f}"
        lines.append(f"{name},{entry['full']:.4f},{multi}")
    path = out_dir / "report.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


# --- temperature sweep -----------------------------------------------------------

def temperature_sweep(generate_fn, temperatures: list[float], num_samples: int,
                      clip_sim_fn=None) -> list[dict]:
    """Diversity (and optional scaled similarity) per sampling temperature.

    ``generate_fn(temperature, num_samples)`` returns a list of
    DiversitySample; ``clip_sim_fn(samples)`` an optional mean similarity
    already scaled for reporting.
    """
    rows = []
    for temp in temperatures:
        samples = generate_fn(temp, num_samples)
        row = {"temperature": temp, **diversity(samples)}
        if clip_sim_fn is not None:
            row["clip_sim_scaled"] = clip_sim_fn(samples)
        rows.append(row)
    return rows


def plot_temperature_sweep(rows: list[dict], path: str | Path) -> Path:
    """Temperature on x; scaled CLIPSim, Distinct-1, Self-BLEU curves on y."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    temps = [r["temperature"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(temps, [r["distinct1"] for r in rows], marker="o", label="Distinct-1")
    if rows and rows[0].get("self_bleu") is not None:
        ax.plot(temps, [r["self_bleu"] / 100.0 for r in rows], marker="s",
                label="Self-BLEU / 100")
    if rows and rows[0].get("clip_sim_scaled") is not None:
        ax.plot(temps, [r["clip_sim_scaled"] for r in rows], marker="^",
                label="CLIPSim (scaled)")
    ax.set_xlabel("sampling temperature")
    ax.set_ylabel("score")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
