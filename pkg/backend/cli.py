"""
Command-line entry point.

    python backend/cli.py vad make-corpus --out-dir corpus
    python backend/cli.py vad train corpus --model-out models/vad.json
    python backend/cli.py proximity calibrate --repeats 10
    python backend/cli.py sim run scenarios/default.json --out-dir output
    python backend/cli.py metrics --logs-dir output/logs --annotations output/annotations.csv

Domain errors print one line on stderr and exit 1; click reports usage errors
with exit 2.
"""

import functools
import json
import logging
import os
import sys

import click
import numpy as np
from marshmallow import ValidationError
from sklearn.model_selection import train_test_split

import audio_io
import proximity
import sim
import synth
import vad
from audit import validate_session_logs
from config import load_config
from errors import DymandError
from metrics import build_report, collection_counts_from_logs, render_report, report_dict
from obslog import LogBundle, read_annotations, read_log_dir, read_log_file
from scenario import load_scenario
from session import TimingConfig

logger = logging.getLogger(__name__)


def _reports_errors(command):
    """Turn domain errors into a stderr line and exit status 1"""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (DymandError, ValidationError, OSError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
@click.option('--config', 'env_file', type=click.Path(dir_okay=False), default=None,
              help='.env file with DYMAND_* settings')
@click.option('-v', '--verbose', is_flag=True, help='Debug logging')
@click.pass_context
def cli(ctx, env_file, verbose):
    """Couple-interaction sensing: VAD training, study simulation and reporting."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, stream=sys.stderr,
                        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    ctx.obj = load_config(env_file)


# -- vad ---------------------------------------------------------------------

@cli.group('vad')
def vad_group():
    """Voice activity detection model."""


@vad_group.command('make-corpus')
@click.option('--out-dir', required=True, type=click.Path(file_okay=False))
@click.option('--segments', default=2000, show_default=True, type=click.IntRange(min=2))
@click.option('--seed', default=0, show_default=True, type=int)
@_reports_errors
def vad_make_corpus(out_dir, segments, seed):
    """Write a synthetic speech/noise corpus (WAV segments + labels.csv)."""
    audio, labels = synth.make_corpus(segments, np.random.default_rng(seed))
    labels_path = synth.write_corpus(out_dir, audio, labels)
    click.echo(f"{len(labels)} segments written, labels in {labels_path}")


def _split(segments, labels, seed):
    indicator = [label.value for label in labels]
    return train_test_split(segments, labels, test_size=0.2, stratify=indicator, random_state=seed)


def _model_path(config, path):
    return path or os.path.join(config.MODELS_FOLDER, 'vad.json')


_model_opt = click.option('--model', 'model_path', default=None, type=click.Path(dir_okay=False),
                          help='Defaults to <models folder>/vad.json')


@vad_group.command('train')
@click.argument('corpus_dir', type=click.Path(file_okay=False))
@click.option('--model-out', default=None, type=click.Path(dir_okay=False),
              help='Defaults to <models folder>/vad.json')
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--frames-per-segment', default=None, type=click.IntRange(min=1),
              help='Subsample frames per second of audio to speed up training')
@click.pass_obj
@_reports_errors
def vad_train(config, corpus_dir, model_out, seed, frames_per_segment):
    """Train on 80% of a corpus with stratified k-fold selection, report on the held-out 20%."""
    segments, labels = synth.read_corpus(corpus_dir)
    train_x, test_x, train_y, test_y = _split(segments, labels, seed)
    dsp = vad.DspConfig.from_config(config)
    features, frame_labels = vad.segment_features(train_x, train_y, dsp, frames_per_segment)
    model = vad.train(features, frame_labels, hyper_grid=config.VAD_HYPER_GRID, folds=config.VAD_FOLDS,
                      seed=seed, epochs=config.VAD_EPOCHS, learning_rate=config.VAD_LEARNING_RATE,
                      rms_threshold=config.RMS_THRESHOLD,
                      segment_speech_fraction=config.SEGMENT_SPEECH_FRACTION)
    model_out = _model_path(config, model_out)
    model_dir = os.path.dirname(model_out)
    if model_dir:
        os.makedirs(model_dir, exist_ok=True)
    vad.save_model(model, model_out)
    held_out = vad.evaluate_segments(model, test_x, test_y)
    click.echo(f"regularization={model.regularization} cv_accuracy={model.cv_accuracy:.4f}")
    click.echo(f"hold-out accuracy={held_out.accuracy:.4f} shr={held_out.shr:.4f} far={held_out.far:.4f}")


@vad_group.command('eval')
@click.argument('corpus_dir', type=click.Path(file_okay=False))
@_model_opt
@click.option('--latency', is_flag=True, help='Also time feature extraction plus classification per frame')
@click.pass_obj
@_reports_errors
def vad_eval(config, corpus_dir, model_path, latency):
    """Second-level accuracy, speech hit rate and false alarm rate on a corpus."""
    model = vad.load_model(_model_path(config, model_path))
    segments, labels = synth.read_corpus(corpus_dir)
    result = vad.evaluate_segments(model, segments, labels)
    click.echo(f"accuracy={result.accuracy:.4f} shr={result.shr:.4f} far={result.far:.4f} n={len(labels)}")
    if latency:
        frames = segments[:50].reshape(-1, model.dsp.frame_length)
        per_frame = vad.measure_frame_latency(model, frames)
        click.echo(f"mean frame latency={per_frame * 1000:.3f} ms")


@vad_group.command('classify')
@click.argument('wav', type=click.Path(dir_okay=False))
@_model_opt
@click.pass_obj
@_reports_errors
def vad_classify(config, wav, model_path):
    """Print the Silence/Speech/NonSpeech decision for every second of a WAV file."""
    model = vad.load_model(_model_path(config, model_path))
    samples = audio_io.load_for_vad(wav)
    for second, segment in enumerate(audio_io.one_second_segments(samples)):
        click.echo(f"{second}\t{vad.decide_segment(model, segment).value}")


# -- proximity ---------------------------------------------------------------

@cli.group('proximity')
def proximity_group():
    """BLE proximity threshold."""


@proximity_group.command('calibrate')
@click.option('--max-distance', default=10.0, show_default=True, type=click.FloatRange(min=1.0))
@click.option('--step', default=0.5, show_default=True, type=click.FloatRange(min=0.1))
@click.option('--repeats', default=10, show_default=True, type=click.IntRange(min=1))
@click.option('--seed', default=0, show_default=True, type=int)
@click.pass_obj
@_reports_errors
def proximity_calibrate(config, max_distance, step, repeats, seed):
    """Averaged RSSI over a distance sweep, the fitted path-loss curve and where it crosses the threshold."""
    model = proximity.PathLossModel.from_config(config)
    threshold = proximity.ProximityConfig.from_config(config).threshold_dbm
    distances = np.arange(step, max_distance + step / 2, step)
    mean_rssi = proximity.simulate_calibration(model, distances, np.random.default_rng(seed), repeats)
    for d, rssi in zip(distances, mean_rssi):
        click.echo(f"{d:.2f}\t{rssi:.2f}")
    fitted = proximity.fit_path_loss(distances, mean_rssi, model.noise_std_db)
    crossing = proximity.crossing_distance(fitted, threshold)
    click.echo(f"rssi_at_1m={fitted.rssi_at_1m_dbm:.2f} exponent={fitted.path_loss_exponent:.2f} "
               f"crossing={crossing:.2f} m at {threshold:.0f} dB")


# -- sim ---------------------------------------------------------------------

@cli.group('sim')
def sim_group():
    """Study simulation."""


_scenario_arg = click.argument('scenario_path', required=False, type=click.Path(dir_okay=False))
_seed_opt = click.option('--seed', default=None, type=int, help="Override the scenario's seed")
_mode_opt = click.option('--mode', type=click.Choice(list(sim.MODES)), default=sim.GROUND_TRUTH,
                         show_default=True)
_jobs_opt = click.option('--jobs', default=None, type=click.IntRange(min=1), help='Parallel couples')


@sim_group.command('run')
@_scenario_arg
@_seed_opt
@_mode_opt
@_jobs_opt
@click.option('--out-dir', default=None, type=click.Path(file_okay=False))
@click.option('--trace', is_flag=True, help='Also write session and transport traces')
@click.pass_obj
@_reports_errors
def sim_run(config, scenario_path, seed, mode, jobs, out_dir, trace):
    """Simulate a study and write logs, annotations and the report."""
    scenario = load_scenario(scenario_path or config.DEFAULT_SCENARIO, seed)
    timing = TimingConfig.from_config(config)
    result = sim.run(scenario, mode=mode, jobs=jobs or config.SIM_JOBS, trace=trace, timing=timing,
                     ble_log_period_s=config.BLE_LOG_PERIOD_S)
    violations = validate_session_logs(LogBundle.of(result.logs).hourly, timing)
    for violation in violations:
        click.echo(f"violation: {violation}", err=True)
    paths = sim.write_outputs(result, out_dir or config.OUTPUT_DIR)
    click.echo(render_report(result.report.study), nl=False)
    click.echo(f"report written to {paths['report']}")
    if violations:
        sys.exit(1)


@sim_group.command('compare')
@_scenario_arg
@_seed_opt
@_mode_opt
@_jobs_opt
@click.pass_obj
@_reports_errors
def sim_compare(config, scenario_path, seed, mode, jobs):
    """Conversation-capture rate of the trigger policy against scheduled and random recording."""
    scenario = load_scenario(scenario_path or config.DEFAULT_SCENARIO, seed)
    result = sim.run(scenario, mode=mode, jobs=jobs or config.SIM_JOBS, timing=TimingConfig.from_config(config),
                     ble_log_period_s=config.BLE_LOG_PERIOD_S)
    report = result.report
    for policy, rate in report.policies.items():
        value = 'n/a' if rate is None else f"{rate:.1f}"
        click.echo(f"{policy}\t{value}\t{report.policy_samples[policy]}")


# -- reporting ---------------------------------------------------------------

@cli.command('metrics')
@click.option('--logs-dir', required=True, type=click.Path(file_okay=False))
@click.option('--annotations', 'annotations_path', required=True, type=click.Path(dir_okay=False))
@click.option('--json-out', default=None, type=click.Path(dir_okay=False),
              help='Also write the machine-readable report')
@_reports_errors
def metrics_cmd(logs_dir, annotations_path, json_out):
    """Data-collection and recording-content report from study logs and annotations."""
    bundle = LogBundle.of(read_log_dir(logs_dir))
    annotations = read_annotations(annotations_path)
    report = build_report(collection_counts_from_logs(bundle.configs, bundle.hourly), annotations)
    click.echo(render_report(report), nl=False)
    if json_out:
        with open(json_out, 'w') as f:
            json.dump(report_dict(report), f, indent=2, sort_keys=True)
            f.write('\n')


@cli.command('logparse')
@click.argument('files', nargs=-1, required=True, type=click.Path(dir_okay=False))
@_reports_errors
def logparse_cmd(files):
    """Validate log files and print record counts per type."""
    for path in files:
        counts = LogBundle.of(read_log_file(path)).counts()
        summary = ' '.join(f"{name}={n}" for name, n in counts.items())
        click.echo(f"{path}: {summary}")


if __name__ == '__main__':
    cli()
