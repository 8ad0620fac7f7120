from flask import Flask, request, jsonify, send_from_directory, abort
import json
from datetime import datetime
from pathlib import Path
import logging
import sys

from src.config import OUTPUTS_DIR
from src.corpus import parse_timestamp
from src.pipeline import OriginalityPipeline, PipelineConfig, SNAPSHOT_DIR_FORMAT, PipelineStageError

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    stream=sys.stdout
)
logger = logging.getLogger(__name__)

app = Flask(__name__)
app.config['OUTPUTS_DIR'] = OUTPUTS_DIR

ARTIFACTS = {
    'graph.tsv',
    'pagerank.jsonl',
    'clusters.jsonl',
    'scores.jsonl',
    'stats.json',
    'rejects.jsonl',
    'config.yaml',
}

logger.info("=" * 60)
logger.info("News Originality Inspector - Starting")
logger.info(f"Outputs directory: {OUTPUTS_DIR}")
logger.info("=" * 60)


def outputs_dir() -> Path:
    return Path(app.config['OUTPUTS_DIR'])


def snapshot_path(ts: str) -> Path:
    # only fixed-format timestamp names map to snapshot directories
    try:
        datetime.strptime(ts, SNAPSHOT_DIR_FORMAT)
    except ValueError:
        abort(404)
    path = outputs_dir() / ts
    if not path.is_dir():
        abort(404)
    return path


@app.route('/snapshots')
def list_snapshots():
    root = outputs_dir()
    snapshots = []
    if root.exists():
        for path in sorted(root.iterdir()):
            if path.is_dir() and not path.name.startswith('.'):
                snapshots.append({
                    'snapshot': path.name,
                    'artifacts': sorted(p.name for p in path.iterdir() if p.name in ARTIFACTS),
                })
    return jsonify({'snapshots': snapshots, 'count': len(snapshots)})


@app.route('/snapshots/<ts>/top')
def top_articles(ts):
    path = snapshot_path(ts)
    try:
        n = int(request.args.get('n', 10))
        if n < 1:
            raise ValueError
    except ValueError:
        return jsonify({'error': 'n must be a positive integer'}), 400

    records = []
    with open(path / 'scores.jsonl', 'r', encoding='utf-8') as f:
        for line in f:
            if line.strip():
                records.append(json.loads(line))
    records.sort(key=lambda r: (-r['p_original'], -(r['originality'] or 0.0), r['id']))
    return jsonify({'snapshot': ts, 'articles': records[:n]})


@app.route('/snapshots/<ts>/<artifact>')
def serve_artifact(ts, artifact):
    path = snapshot_path(ts)
    if artifact not in ARTIFACTS:
        abort(404)
    return send_from_directory(path, artifact)


@app.route('/run', methods=['POST'])
def run():
    try:
        data = request.get_json(silent=True)

        if not data:
            return jsonify({'error': 'No data provided'}), 400
        if 'corpus' not in data or 'snapshot_time' not in data:
            return jsonify({'error': "Both 'corpus' and 'snapshot_time' are required"}), 400

        logger.info(f"Received run request: {data}")

        config = PipelineConfig.from_dict(data.get('config') or {})
        pipeline = OriginalityPipeline(config, outputs_dir())
        result = pipeline.run_snapshot(
            Path(data['corpus']),
            parse_timestamp(data['snapshot_time']),
            overwrite=bool(data.get('overwrite', False)),
        )

        return jsonify({
            'success': True,
            'snapshot': result.output_dir.name,
            'articles': len(result.records),
            'clusters': result.clusters,
            'timings': result.timings,
        })

    except PipelineStageError as e:
        status = 400 if isinstance(e.cause, (ValueError, FileNotFoundError)) else 500
        logger.error(f"Run failed in stage '{e.stage}': {e.cause}")
        return jsonify({'error': str(e), 'stage': e.stage}), status
    except (ValueError, FileNotFoundError, FileExistsError) as e:
        logger.error(f"Validation error: {e}")
        return jsonify({'error': str(e)}), 400
    except Exception as e:
        logger.error(f"Error running snapshot: {e}", exc_info=True)
        return jsonify({'error': f'Error running snapshot: {str(e)}'}), 500


@app.route('/health')
def health():
    """Health check endpoint for deployment monitoring"""
    return jsonify({
        'status': 'healthy',
        'service': 'News Originality Inspector',
        'version': '0.1.0',
        'checks': {'outputs': outputs_dir().exists()},
    }), 200


if __name__ == '__main__':
    logger.info("Starting Flask development server on port 5000...")
    app.run(host='0.0.0.0', port=5000, debug=True)
