import argparse
import os
import sys
import time
from datetime import datetime

import numpy as np
from torch.utils.tensorboard import SummaryWriter
from tqdm import tqdm

from dataset.lattice import build_neighbor_graph, partition, reassemble
from dataset.raster import read_field, write_field
from dataset.simulate import build_scenario
from eval.cluster import cluster_pipeline, select_k
from eval.metrics import adjusted_rand, isolated_count, jaccard
from eval.variogram import cluster_variograms
from model.basis import BasisSystem
from model.estimator import FitOptions, fit, load_fit, save_fit
from model.spectrum import periodogram_set
from utils.config import load_config
from utils.device import select_device
from utils.errors import NumericError, ValidationError
from utils.file import get_fit_dir, read_kv, read_matrix, write_kv, write_matrix, write_rows
from utils.log import Logger
from utils.visualizer import field_image, label_map, write_pgm

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3
LABEL_HEADER = ['index', 'row', 'col', 'label']


def parse_args(argv=None):
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None, help='key = value config file; flags override it')
    common.add_argument('--input', type=str, default=None, help='raster (.csv/.bin) or a simulate output directory')
    common.add_argument('--scenario', type=str, default=None, choices=['p1', 'p2', 'gradient'])
    common.add_argument('--m', type=int, default=None, help='number of subregions (p1/p2)')
    common.add_argument('--rows', type=int, default=None, help='lattice rows')
    common.add_argument('--cols', type=int, default=None, help='lattice cols')
    common.add_argument('--side', type=int, default=None, help='subregion side length in cells')
    common.add_argument('--l', type=int, default=None, help='marginal B-spline count, L = l^2')
    common.add_argument('--seed', type=int, default=None)
    common.add_argument('--spatial', type=str, default=None, choices=['on', 'off'], help='neighbour fusion penalty')
    common.add_argument('--k', type=int, default=None, help='rank / cluster count; auto-selected when absent')
    common.add_argument('--k-select', dest='k_select', type=str, default=None, choices=['elbow', 'ch'])
    common.add_argument('--k-max', dest='k_max', type=int, default=None)
    common.add_argument('--features', type=str, default=None, help='astar|a|sdf|spb|spk|sep, comma list or all')
    common.add_argument('--max-iter', dest='max_iter', type=int, default=None)
    common.add_argument('--replicates', type=int, default=None)
    common.add_argument('--threads', type=int, default=None, help='torch thread cap, 0 keeps the default')
    common.add_argument('--device', type=str, default=None, help='cpu or a cuda device number')
    common.add_argument('--out', type=str, default=None, help='output directory')

    parser = argparse.ArgumentParser(description='collective spectral density estimation and clustering of subregions')
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('simulate', parents=[common], help='sample a scenario lattice')
    estimate = sub.add_parser('estimate', parents=[common], help='fit the collective log-SDF model')
    estimate.add_argument('--export-debug', dest='export_debug', action='store_true',
                          help='also write periodograms, B and R as CSV')
    cluster = sub.add_parser('cluster', parents=[common], help='cluster the subregions of a fit')
    cluster.add_argument('--fit', type=str, default=None, help='fit directory (default <out>/fit)')
    evaluate = sub.add_parser('evaluate', parents=[common], help='compare two label files')
    evaluate.add_argument('labels', type=str)
    evaluate.add_argument('truth', type=str)
    sub.add_parser('pipeline', parents=[common], help='simulate, estimate, cluster and evaluate')
    return parser.parse_args(argv)


def resolve_config(opt):
    overrides = {k: getattr(opt, k, None) for k in ('input', 'scenario', 'm', 'rows', 'cols', 'side', 'l', 'seed',
                                                    'k', 'k_select', 'k_max', 'features', 'max_iter', 'replicates',
                                                    'threads', 'device', 'out')}
    if opt.spatial is not None:
        overrides['spatial'] = opt.spatial == 'on'
    return load_config(opt.config, overrides)


def open_output(cfg, command):
    os.makedirs(cfg.out, exist_ok=True)
    cfg.save(os.path.join(cfg.out, 'config.txt'))
    logger = Logger(os.path.join(cfg.out, f"log_{command}.txt"))
    logger.log(f"========={command}========")
    logger.log(f"[Info] start at {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    return logger


def write_labels(path, labels, cols):
    write_rows(path, LABEL_HEADER, [(i, i // cols, i % cols, int(v)) for i, v in enumerate(labels)])


def read_labels(path):
    if not os.path.isfile(path):
        raise ValidationError(f"label file {path!r} does not exist")
    return read_matrix(path, skip_header=True)[:, -1].astype(np.int64)


def read_lattice(path, side=None):
    """Load a lattice from a raster file (partitioned by side) or a simulate output directory.

    Return:
        (SubregionLattice, truth labels or None, absolute input path)
    """
    path = os.path.abspath(path)
    if os.path.isdir(path):
        scenario = read_kv(os.path.join(path, 'scenario.txt'))
        lat = partition(read_field(os.path.join(path, 'field.bin')), int(scenario['side']))
        if (lat.rows, lat.cols) != (int(scenario['rows']), int(scenario['cols'])):
            raise ValidationError(f"{path}: field does not match the {scenario['rows']}x{scenario['cols']} lattice")
        truth_path = os.path.join(path, 'truth.csv')
        truth = read_labels(truth_path) if os.path.isfile(truth_path) else None
        return lat, truth, path
    if side is None:
        raise ValidationError("a raster input needs the subregion side")
    return partition(read_field(path), side), None, path


def simulate(cfg, out_dir, seed, logger):
    scenario, lat = build_scenario(cfg.scenario, m=cfg.m, shape=cfg.shape(), side=cfg.side, seed=seed)
    os.makedirs(os.path.join(out_dir, 'fields'), exist_ok=True)
    field = reassemble(lat)
    write_field(field, os.path.join(out_dir, 'field.bin'))
    for i, sub in enumerate(lat.subregions):
        write_field(sub, os.path.join(out_dir, 'fields', f"sub_{i:04d}.bin"))
    write_kv(os.path.join(out_dir, 'scenario.txt'), scenario.describe())
    if scenario.true_labels is not None:
        write_labels(os.path.join(out_dir, 'truth.csv'), scenario.true_labels, lat.cols)
    write_pgm(os.path.join(out_dir, 'field.pgm'), field_image(field.values))
    logger.log(f"[Info] scenario {scenario.name}: {lat.rows}x{lat.cols} subregions of side {lat.side}, seed {seed}")
    return scenario, lat


def estimate(cfg, lat, input_path, out_dir, logger, writer=None, device=None, export_debug=False):
    ''' periodograms -> basis -> (K selection) -> fit; writes <out_dir>/fit '''
    P = periodogram_set(lat)
    basis = BasisSystem.build(lat.side, cfg.l)
    graph = build_neighbor_graph(lat.rows, lat.cols)
    K = cfg.k
    if K is None:
        K, _, _ = select_k(P, basis, cfg.k_select, cfg.k_max)
        logger.log(f"[Info] {cfg.k_select} selection chose K = {K}")
    opts = FitOptions(max_iter=cfg.max_iter, tol=cfg.tol, spatial=cfg.spatial, lambda1=cfg.lambda1,
                      lambda2=cfg.lambda2, progress=True)
    start = time.time()
    model_fit = fit(P, basis, graph, K, opts, logger=logger, writer=writer, device=device)
    seconds = time.time() - start
    fit_dir = os.path.join(out_dir, 'fit')
    save_fit(model_fit, fit_dir, meta={'input': input_path, 'side': lat.side, 'rows': lat.rows, 'cols': lat.cols,
                                       'l': cfg.l, 'seconds': f"{seconds:.3f}"})
    if export_debug:
        write_matrix(os.path.join(fit_dir, 'periodogram.csv'), P.I)
        write_matrix(os.path.join(fit_dir, 'B.csv'), basis.B)
        write_matrix(os.path.join(fit_dir, 'R.csv'), basis.R)
    logger.log(f"[Info] fit written to {fit_dir} ({seconds:.2f}s)")
    return model_fit, P, basis, graph, seconds


def write_cluster(out_dir, result, lat, logger):
    os.makedirs(out_dir, exist_ok=True)
    write_labels(os.path.join(out_dir, 'labels.csv'), result.labels, lat.cols)
    if result.wss_curve is not None:
        write_rows(os.path.join(out_dir, 'curves.csv'), ['k', 'wss', 'ch'],
                   [(k + 1, w, c) for k, (w, c) in enumerate(zip(result.wss_curve, result.ch_curve))])
    write_pgm(os.path.join(out_dir, 'map.pgm'), label_map(result.labels, lat.rows, lat.cols))
    rows = []
    for v in cluster_variograms(lat, result.labels, logger=logger):
        rows.extend((v.label, int(h), mu, lo, hi) for h, mu, lo, hi in zip(v.lags, v.mean, v.lo, v.hi))
    write_rows(os.path.join(out_dir, 'variograms.csv'), ['cluster', 'lag', 'mean', 'lo', 'hi'], rows)


def cluster_kinds(cfg, model_fit, P, basis, lat, out_dir, logger, device=None):
    ''' one ClusterResult per requested feature kind; several kinds go to <out_dir>/<kind>/ '''
    kinds = cfg.feature_list()
    results = {}
    for kind in kinds:
        result = cluster_pipeline(P, basis, model_fit, input_kind=kind, k=cfg.k, k_select=cfg.k_select,
                                  k_max=cfg.k_max, device=device, logger=logger)
        write_cluster(out_dir if len(kinds) == 1 else os.path.join(out_dir, kind), result, lat, logger)
        results[kind] = result
    return results


def cmd_simulate(cfg, opt):
    logger = open_output(cfg, 'simulate')
    simulate(cfg, cfg.out, cfg.seed, logger)


def cmd_estimate(cfg, opt):
    if cfg.input is None:
        raise ValidationError("estimate needs --input (a raster file or a simulate output directory)")
    lat, _, path = read_lattice(cfg.input, cfg.side)
    logger = open_output(cfg, 'estimate')
    device, info = select_device(cfg.device, cfg.threads, newline=False)
    logger.log(info)
    writer = SummaryWriter(os.path.join(cfg.out, 'fit_event'))
    try:
        estimate(cfg, lat, path, cfg.out, logger, writer, device, export_debug=opt.export_debug)
    finally:
        writer.close()


def cmd_cluster(cfg, opt):
    fit_dir = get_fit_dir(opt.fit or cfg.out)
    if fit_dir is None:
        raise ValidationError(f"no fit found under {opt.fit or cfg.out!r}; run estimate first")
    model_fit, meta = load_fit(fit_dir)
    lat, _, _ = read_lattice(meta['input'], int(meta['side']))
    logger = open_output(cfg, 'cluster')
    P = periodogram_set(lat)
    basis = BasisSystem.build(lat.side, int(meta['l']))
    cluster_kinds(cfg, model_fit, P, basis, lat, cfg.out, logger)


def evaluate(labels, truth):
    return {'ari': adjusted_rand(labels, truth), 'jaccard': jaccard(labels, truth)}


def cmd_evaluate(cfg, opt):
    scores = evaluate(read_labels(opt.labels), read_labels(opt.truth))
    print(f"ARI {scores['ari']:.6f}")
    print(f"Jaccard {scores['jaccard']:.6f}")
    return scores


def cmd_pipeline(cfg, opt):
    logger = open_output(cfg, 'pipeline')
    device, info = select_device(cfg.device, cfg.threads, newline=False)
    logger.log(info)
    replicates = 1 if cfg.input is not None else cfg.replicates
    kinds = cfg.feature_list()
    rows, timings = [], []
    has_truth = True
    for r in tqdm(range(replicates), unit="replicate"):
        seed = cfg.seed + r
        rep_dir = os.path.join(cfg.out, f"rep_{r:03d}") if replicates > 1 else cfg.out
        os.makedirs(rep_dir, exist_ok=True)
        if cfg.input is not None:
            lat, truth, path = read_lattice(cfg.input, cfg.side)
        else:
            scenario, lat = simulate(cfg, rep_dir, seed, logger)
            truth, path = scenario.true_labels, os.path.abspath(rep_dir)
        writer = SummaryWriter(os.path.join(rep_dir, 'fit_event'))
        try:
            model_fit, P, basis, graph, seconds = estimate(cfg, lat, path, rep_dir, logger, writer, device)
        finally:
            writer.close()
        timings.append(seconds)
        results = cluster_kinds(cfg, model_fit, P, basis, lat, rep_dir, logger, device)
        if truth is None:
            has_truth = False
            continue
        for kind, result in results.items():
            scores = evaluate(result.labels, truth)
            rows.append((r, seed, kind, scores['ari'], scores['jaccard'], isolated_count(result.labels, graph)))
            logger.log(f"[Info] replicate {r} ({kind}): ARI {scores['ari']:.4f}, Jaccard {scores['jaccard']:.4f}")

    summary = {'replicates': replicates, 'features': ','.join(kinds),
               'mean_fit_seconds': f"{np.mean(timings):.3f}", 'total_fit_seconds': f"{np.sum(timings):.3f}"}
    if has_truth:
        write_rows(os.path.join(cfg.out, 'evaluation.csv'),
                   ['replicate', 'seed', 'features', 'ari', 'jaccard', 'isolated'], rows)
        for kind in kinds:
            ari = np.array([row[3] for row in rows if row[2] == kind])
            jac = np.array([row[4] for row in rows if row[2] == kind])
            sd = (lambda x: float(np.std(x, ddof=1)) if x.size > 1 else 0.0)
            summary[f'{kind}_ari_mean'], summary[f'{kind}_ari_sd'] = repr(float(ari.mean())), repr(sd(ari))
            summary[f'{kind}_jaccard_mean'], summary[f'{kind}_jaccard_sd'] = repr(float(jac.mean())), repr(sd(jac))
            logger.log(f"[Result] {kind}: ARI {ari.mean():.4f} (sd {sd(ari):.4f}), "
                       f"Jaccard {jac.mean():.4f} (sd {sd(jac):.4f})")
    else:
        summary['evaluation'] = 'skipped: scenario has no ground truth'
        logger.log("[Info] evaluation skipped: scenario has no ground truth")
    write_kv(os.path.join(cfg.out, 'summary.txt'), summary)
    return summary


COMMANDS = {'simulate': cmd_simulate, 'estimate': cmd_estimate, 'cluster': cmd_cluster,
            'evaluate': cmd_evaluate, 'pipeline': cmd_pipeline}


def main(argv=None):
    opt = parse_args(argv)
    try:
        cfg = resolve_config(opt)
        COMMANDS[opt.command](cfg, opt)
    except ValidationError as e:
        print(f"[Error] {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as e:
        print(f"[Error] numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
