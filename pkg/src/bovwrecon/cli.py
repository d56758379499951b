"""Command-line entry point: ``bovwrecon <subcommand> ...``.

Every command validates its inputs and computes everything in memory before
writing; outputs are accompanied by a ``<output>.manifest.json`` that can be
replayed with ``bovwrecon rerun``.
"""

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .apps import (
    classifier_to_bovw,
    format_histogram,
    histogram_multiset,
    match_total,
    morph_sequence,
    read_caption_corpus,
    read_classifier,
    read_histogram,
    sentence_to_bovw,
    word_to_bovw_direction,
)
from .costs import (
    OffsetSet,
    adjacency_bytes,
    learn_adjacency_cost,
    learn_position_cost,
    position_bytes,
    read_adjacency,
    read_position,
)
from .errors import BovwError, InvalidInputError, NotFoundError
from .imageio import encode_pgm, read_image
from .metrics import MetricReport, direct_comparison, image_metrics, neighbor_comparison
from .pipeline import (
    Codebook,
    SamplingSpec,
    WordGrid,
    codebook_bytes,
    corpus_features,
    image_to_grid,
    pool,
    read_codebook,
    train_codebook,
)
from .qap import SOLVERS, SolverConfig, objective, solve
from .render import render_layout

log = logging.getLogger("bovwrecon")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3
IMAGE_EXTS = (".pgm", ".ppm", ".pnm")


# -- small file helpers ------------------------------------------------------

def is_image_path(path: str) -> bool:
    return os.path.splitext(path)[1].lower() in IMAGE_EXTS


def list_images(image_dir: str) -> List[str]:
    if not os.path.isdir(image_dir):
        raise InvalidInputError(f"{image_dir}: not a directory")
    names = sorted(n for n in os.listdir(image_dir) if is_image_path(n))
    return [os.path.join(image_dir, n) for n in names]


def load_images(paths: Sequence[str], threads: int = 1) -> List[np.ndarray]:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(read_image, paths))
    return [read_image(p) for p in paths]


def format_grid(grid: WordGrid) -> str:
    rows = [" ".join(map(str, r)) for r in grid.labels.tolist()]
    return f"{grid.grid_w} {grid.grid_h}\n" + "\n".join(rows) + "\n"


def read_grid(path: str, sampling: SamplingSpec = SamplingSpec()) -> WordGrid:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    try:
        w, h = int(lines[0][0]), int(lines[0][1])
        labels = np.array([[int(t) for t in row] for row in lines[1:]], dtype=np.int64)
    except (ValueError, IndexError):
        raise InvalidInputError(f"{path}: malformed grid file") from None
    if labels.shape != (h, w):
        raise InvalidInputError(f"{path}: expected {h} rows of {w} labels")
    return WordGrid(labels, sampling)


def parse_grid_size(text: Optional[str]) -> Optional[Tuple[int, int]]:
    """'WxH' -> (grid_h, grid_w)."""
    if text is None:
        return None
    try:
        w, h = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise InvalidInputError(f"bad grid size {text!r}; expected WxH") from None
    if w < 1 or h < 1:
        raise InvalidInputError("grid dimensions must be positive")
    return h, w


class Outputs:
    """Collects output payloads so nothing touches disk until a command has succeeded."""

    def __init__(self):
        self.files: Dict[str, bytes] = {}

    def add(self, path: str, payload) -> None:
        if isinstance(payload, str):
            payload = payload.encode()
        self.files[path] = payload

    def commit(self) -> List[str]:
        for path, payload in self.files.items():
            parent = os.path.dirname(os.path.abspath(path))
            os.makedirs(parent, exist_ok=True)
            with open(path, "wb") as fh:
                fh.write(payload)
        return list(self.files)


def manifest_path(primary: str) -> str:
    return primary + ".manifest.json"


def build_manifest(args, argv: Sequence[str], outputs: List[str], wall: float, extra=None) -> str:
    params = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {
        "command": args.command,
        "tool": "bovwrecon",
        "version": __version__,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "params": params,
        "outputs": outputs,
        "wall_time_s": wall,
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# -- shared model loading ----------------------------------------------------

class Model:
    def __init__(self, args):
        self.cb = read_codebook(args.codebook)
        self.ca = read_adjacency(args.adjacency)
        self.cp = read_position(args.position)
        if not self.cb.K == self.ca.K == self.cp.K:
            raise InvalidInputError(
                f"vocabulary sizes disagree: codebook {self.cb.K}, adjacency {self.ca.K}, position {self.cp.K}")
        self.sampling = SamplingSpec(self.cb.patch_size, args.stride)

    def default_shape(self, grid: Optional[str]) -> Tuple[int, int]:
        shape = parse_grid_size(grid)
        if shape is None:
            side = int(math.isqrt(self.cp.N))
            if side * side != self.cp.N:
                raise InvalidInputError(f"{self.cp.N} places is not a square grid; pass --grid WxH")
            shape = (side, side)
        if shape[0] * shape[1] != self.cp.N:
            raise InvalidInputError(f"grid {shape[1]}x{shape[0]} does not match {self.cp.N} learned places")
        return shape


def solver_config(args, seed: Optional[int] = None) -> SolverConfig:
    return SolverConfig(
        lam=args.lam,
        population=args.population,
        replace_prob=args.replace_prob,
        seed=args.seed if seed is None else seed,
        max_generations=args.max_generations,
        threads=args.threads,
    )


def reconstruct_hist(model: Model, hist, shape, args, seed=None):
    hist = np.asarray(hist, dtype=np.int64)
    if hist.size != model.cb.K:
        raise InvalidInputError(f"histogram has {hist.size} bins, codebook has K={model.cb.K}")
    n = shape[0] * shape[1]
    if int(hist.sum()) != n:
        raise InvalidInputError(f"histogram sums to {int(hist.sum())}, grid has {n} cells")
    cfg = solver_config(args, seed)
    t0 = time.perf_counter()
    layout = solve(args.solver, hist, shape, model.ca, model.cp, cfg, model.sampling)
    wall = time.perf_counter() - t0
    val = objective(layout, model.ca, model.cp, cfg.lam)
    return layout, render_layout(layout, model.cb), val, wall


# -- commands ----------------------------------------------------------------

def cmd_build_codebook(args, out: Outputs):
    paths = list_images(args.image_dir)
    if not paths:
        raise InvalidInputError(f"{args.image_dir}: no .pgm/.ppm images found")
    spec = SamplingSpec(args.patch_size, args.stride)
    images = load_images(paths, args.threads)
    for p, img in zip(paths, images):
        try:
            spec.grid_dims(img.shape[1], img.shape[0])
        except InvalidInputError as exc:
            raise InvalidInputError(f"{p}: {exc}") from None
    descs, patches = corpus_features(images, spec)
    cb = train_codebook(descs, patches, args.k, args.iters, args.seed)
    out.add(args.out, codebook_bytes(cb))
    return args.out, {"n_images": len(paths), "n_descriptors": int(descs.shape[0])}


def _corpus_grids(paths, cb: Codebook, spec: SamplingSpec, threads: int) -> List[WordGrid]:
    def one(path):
        img = read_image(path)
        try:
            return image_to_grid(img, cb, spec)
        except InvalidInputError as exc:
            raise InvalidInputError(f"{path}: {exc}") from None
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, paths))
    return [one(p) for p in paths]


def cmd_learn_costs(args, out: Outputs):
    cb = read_codebook(args.codebook)
    spec = SamplingSpec(cb.patch_size, args.stride)
    paths = list_images(args.image_dir) if args.image_dir else []
    if not paths and not args.allow_empty:
        raise InvalidInputError("empty corpus; pass --allow-empty to learn smoothing-only tables")
    grids = _corpus_grids(paths, cb, spec, args.threads)
    if grids:
        n_places = grids[0].n_cells
    else:
        gw, gh = spec.grid_dims(args.image_size, args.image_size)
        n_places = gw * gh
    offsets = OffsetSet.from_m(args.m)
    ca = learn_adjacency_cost(grids, cb.K, offsets)
    cp = learn_position_cost(grids, cb.K, n_places)
    out.add(args.out + ".bvwa", adjacency_bytes(ca))
    out.add(args.out + ".bvwp", position_bytes(cp))
    return args.out + ".bvwa", {"n_images": len(grids), "n_places": n_places}


def cmd_extract(args, out: Outputs):
    cb = read_codebook(args.codebook)
    spec = SamplingSpec(cb.patch_size, args.stride)
    grid = image_to_grid(read_image(args.image), cb, spec)
    out.add(args.out, format_histogram(pool(grid, cb.K)))
    if args.grid:
        out.add(args.grid, format_grid(grid))
    return args.out, {"grid": [grid.grid_w, grid.grid_h]}


def cmd_reconstruct(args, out: Outputs):
    model = Model(args)
    truth = original = None
    if is_image_path(args.input):
        original = read_image(args.input)
        truth = image_to_grid(original, model.cb, model.sampling)
        hist = pool(truth, model.cb.K)
        shape = truth.shape
        if shape[0] * shape[1] != model.cp.N:
            raise InvalidInputError(f"image grid has {truth.n_cells} cells, position cost has {model.cp.N}")
    else:
        hist = read_histogram(args.input)
        shape = model.default_shape(args.grid)
    layout, img, val, wall = reconstruct_hist(model, hist, shape, args)
    x = x4 = x8 = dc = nc = None
    if original is not None:
        x, x4, x8 = image_metrics(img, original)
        dc = direct_comparison(layout, truth)
        nc = neighbor_comparison(layout, truth) if truth.n_cells > 1 else None
    image_id = os.path.splitext(os.path.basename(args.input))[0]
    report = MetricReport(image_id, x, x4, x8, dc, nc, val, wall)
    out.add(args.out, encode_pgm(img))
    if args.csv:
        out.add(args.csv, report.to_csv())
    if args.layout:
        out.add(args.layout, format_grid(layout))
    return args.out, {"objective": val, "histogram": hist.tolist()}


def cmd_evaluate(args, out: Outputs):
    recon, ref = read_image(args.image), read_image(args.reference)
    if recon.shape != ref.shape:
        raise InvalidInputError(f"image sizes differ: {recon.shape} vs {ref.shape}")
    x, x4, x8 = image_metrics(recon, ref)
    dc = nc = None
    if args.layout or args.truth:
        if not (args.layout and args.truth):
            raise InvalidInputError("--layout and --truth must be given together")
        lay, tru = read_grid(args.layout), read_grid(args.truth)
        dc = direct_comparison(lay, tru)
        nc = neighbor_comparison(lay, tru)
    image_id = os.path.splitext(os.path.basename(args.image))[0]
    report = MetricReport(image_id, x, x4, x8, dc, nc, None, None)
    text = report.to_csv()
    out.add(args.csv, text)
    return args.csv, {}


def _words_of(path: str, model: Model) -> Tuple[List[int], Tuple[int, int]]:
    if is_image_path(path):
        grid = image_to_grid(read_image(path), model.cb, model.sampling)
        return grid.flat.tolist(), grid.shape
    hist = read_histogram(path)
    return histogram_multiset(hist), None


def cmd_morph(args, out: Outputs):
    model = Model(args)
    ws, shape_s = _words_of(args.source, model)
    wt, shape_t = _words_of(args.target, model)
    shape = shape_s or shape_t or model.default_shape(args.grid)
    seq = morph_sequence(ws, wt, seed=args.seed, K=model.cb.K)
    frames = []
    for i, hist in enumerate(seq):
        _, img, _, _ = reconstruct_hist(model, hist, shape, args)
        path = f"{args.out}_{i:03d}.pgm"
        out.add(path, encode_pgm(img))
        frames.append(path)
    return frames[0], {"frames": len(seq), "histograms": [h.tolist() for h in seq]}


def _fit_to_grid(raw: np.ndarray, direction: np.ndarray, shape) -> Tuple[np.ndarray, dict]:
    """Make an inverted histogram fill the grid; rounding can miss the exact word count."""
    n_cells = shape[0] * shape[1]
    info = {"raw_histogram": raw.tolist()}
    if int(raw.sum()) == n_cells:
        return raw, info
    log.warning("rounded histogram has %d words; adjusting to the grid's %d cells", int(raw.sum()), n_cells)
    info["adjusted_to_grid"] = True
    return match_total(raw, direction, n_cells), info


def cmd_invert_classifier(args, out: Outputs):
    model = Model(args)
    clf = read_classifier(args.weights)
    if clf.weights.size != model.cb.K:
        raise InvalidInputError(f"weight vector has {clf.weights.size} entries, codebook has K={model.cb.K}")
    shape = model.default_shape(args.grid)
    n = args.n if args.n is not None else shape[0] * shape[1]
    raw = classifier_to_bovw(clf, n)
    hist, info = _fit_to_grid(raw, clf.weights, shape)
    first = None
    for r in range(args.runs):
        _, img, _, _ = reconstruct_hist(model, hist, shape, args, seed=args.seed + r)
        path = f"{args.out}_run{r}.pgm"
        out.add(path, encode_pgm(img))
        first = first or path
    return first, {"histogram": hist.tolist(), **info}


def cmd_sentence(args, out: Outputs):
    model = Model(args)
    corpus = read_caption_corpus(args.corpus)
    if corpus.K != model.cb.K:
        raise InvalidInputError(f"caption corpus has K={corpus.K}, codebook has K={model.cb.K}")
    words = [w.lower() for w in args.words]
    known = [w for w in words if corpus.word_counts(w).any()]
    if not known:
        raise InvalidInputError(f"none of the words {words} occur in the caption corpus")
    shape = model.default_shape(args.grid)
    n = args.n if args.n is not None else shape[0] * shape[1]
    raw = sentence_to_bovw(words, corpus, n)
    direction = np.mean([word_to_bovw_direction(w, corpus) for w in known], axis=0)
    hist, info = _fit_to_grid(raw, direction, shape)
    _, img, _, _ = reconstruct_hist(model, hist, shape, args)
    out.add(args.out, encode_pgm(img))
    return args.out, {"histogram": hist.tolist(), "known_words": known, **info}


def cmd_rerun(args, out: Outputs):
    with open(args.manifest) as fh:
        doc = json.load(fh)
    argv = doc.get("argv")
    if not isinstance(argv, list) or not argv or argv[0] == "rerun":
        raise InvalidInputError(f"{args.manifest}: manifest has no replayable argv")
    cwd = os.getcwd()
    try:
        os.chdir(doc.get("cwd", cwd))
        code = main(argv)
    finally:
        os.chdir(cwd)
    if code:
        raise SystemExit(code)
    return None, None


# -- parser ------------------------------------------------------------------

def _add_sampling(p, patch=False):
    if patch:
        p.add_argument("--patch-size", type=int, default=32, help="patch side in pixels (default 32)")
    p.add_argument("--stride", type=int, default=8, help="sampling step in pixels (default 8)")
    p.add_argument("--threads", type=int, default=1)


def _add_model(p):
    p.add_argument("--codebook", required=True)
    p.add_argument("--adjacency", required=True, help=".bvwa adjacency cost file")
    p.add_argument("--position", required=True, help=".bvwp position cost file")
    p.add_argument("--grid", help="grid size WxH for histogram inputs (default: square)")
    _add_sampling(p)
    _add_solver(p)


def _add_solver(p):
    p.add_argument("--lambda", dest="lam", type=float, default=0.8)
    p.add_argument("--solver", choices=SOLVERS, default="gahc")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--population", type=int, default=100)
    p.add_argument("--replace-prob", type=float, default=0.2)
    p.add_argument("--max-generations", type=int, default=10000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bovwrecon", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-codebook", help="train a visual-word codebook from a directory of images")
    p.add_argument("image_dir")
    p.add_argument("--k", type=int, default=256, help="vocabulary size (default 256)")
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_sampling(p, patch=True)
    p.set_defaults(func=cmd_build_codebook)

    p = sub.add_parser("learn-costs", help="learn adjacency and position costs from a corpus")
    p.add_argument("image_dir", nargs="?")
    p.add_argument("--codebook", required=True)
    p.add_argument("--m", type=int, default=48, help="neighbor count, (2r+1)^2-1 (default 48)")
    p.add_argument("--allow-empty", action="store_true")
    p.add_argument("--image-size", type=int, default=128, help="image side used with an empty corpus")
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.bvwa and PREFIX.bvwp")
    _add_sampling(p)
    p.set_defaults(func=cmd_learn_costs)

    p = sub.add_parser("extract", help="BoVW histogram (and word grid) of an image")
    p.add_argument("image")
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", help="also write the ground-truth word grid here")
    _add_sampling(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("reconstruct", help="recover a layout and render an image")
    p.add_argument("input", help="image (.pgm/.ppm) or histogram text file")
    _add_model(p)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--layout", help="also write the recovered word grid here")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="XCORR metrics (and DC/NC given grids)")
    p.add_argument("image")
    p.add_argument("--reference", required=True)
    p.add_argument("--layout")
    p.add_argument("--truth")
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("morph", help="render the BoVW morph between two inputs")
    p.add_argument("source")
    p.add_argument("target")
    _add_model(p)
    p.add_argument("--out", required=True, help="frame prefix; writes PREFIX_000.pgm, ...")
    p.set_defaults(func=cmd_morph)

    p = sub.add_parser("invert-classifier", help="images maximizing a linear classifier")
    p.add_argument("weights", help="text file: K weights, optional bias line")
    _add_model(p)
    p.add_argument("--n", type=int, help="word count (default: grid cells)")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--out", required=True, help="prefix; writes PREFIX_run<r>.pgm")
    p.set_defaults(func=cmd_invert_classifier)

    p = sub.add_parser("sentence", help="image from a sentence via a caption corpus")
    p.add_argument("corpus", help="caption corpus file")
    p.add_argument("words", nargs="+")
    _add_model(p)
    p.add_argument("--n", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sentence)

    p = sub.add_parser("rerun", help="replay a command from its manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Outputs()
    t0 = time.perf_counter()
    try:
        primary, extra = args.func(args, out)
        if primary is None:
            return EXIT_OK
        wall = time.perf_counter() - t0
        written = list(out.files)
        out.add(manifest_path(primary), build_manifest(args, argv, written, wall, extra))
        out.commit()
    except (InvalidInputError, NotFoundError, BovwError) as exc:
        print(f"bovwrecon: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"bovwrecon: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
