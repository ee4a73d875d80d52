"""
Model files.

A model file is one JSON document:

    {"version": "comet-v1", "checksum": "<sha256>", "payload": {...}}

The checksum is taken over the canonical payload (sorted keys, compact
separators). Arrays are stored as {"shape": [...], "values": "<%.17g ...>"}
so every 64-bit float reads back exactly; scalars use JSON's own float repr,
which round-trips as well.
"""

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from cometflows.exceptions import CometError, CorruptModelError, ModelVersionError
from flows.services.comet import MODE_COMET, MODEL_VERSION, CometModel
from flows.services.copula_flow import Conditioner, CouplingFlow, CouplingLayer
from flows.services.nn_core import DenseLayer, MlpParams
from marginals.services.marginal import MarginalModel
from marginals.services.univariate import GPDist, Kde1D

logger = logging.getLogger(__name__)


# ============================================
# ENCODING
# ============================================

def encode_array(arr):
    arr = np.asarray(arr, dtype=float)
    return {
        'shape': list(arr.shape),
        'values': ' '.join('%.17g' % v for v in arr.ravel()),
    }


def decode_array(doc):
    shape = tuple(int(s) for s in doc['shape'])
    text = doc['values'].split()
    values = np.array(text, dtype=float) if text else np.zeros(0)
    return values.reshape(shape)


def _encode_mlp(params):
    return {
        'layers': [
            {'weight': encode_array(l.weight), 'bias': encode_array(l.bias), 'activation': l.activation}
            for l in params.layers
        ]
    }


def _decode_mlp(doc):
    return MlpParams(tuple(
        DenseLayer(decode_array(l['weight']), decode_array(l['bias']), l['activation'])
        for l in doc['layers']
    ))


def _encode_conditioner(cond):
    return {'net': _encode_mlp(cond.net), 'gate': _encode_mlp(cond.gate), 'offset': _encode_mlp(cond.offset)}


def _decode_conditioner(doc):
    return Conditioner(
        net=_decode_mlp(doc['net']),
        gate=_decode_mlp(doc['gate']),
        offset=_decode_mlp(doc['offset']),
    )


def _encode_flow(flow):
    return {
        'd': flow.d,
        'eps_u': flow.eps_u,
        'sigma_max': flow.sigma_max,
        'logit': flow.logit,
        'n_layers': flow.n_layers,
        'hidden': list(flow.hidden),
        'order': list(flow.order),
        'layers': [
            {
                'k': layer.k,
                'parity': layer.parity,
                'scale_clamp': layer.scale_clamp,
                'scale': _encode_conditioner(layer.scale),
                'shift': _encode_conditioner(layer.shift),
            }
            for layer in flow.layers
        ],
    }


def _decode_flow(doc):
    d = int(doc['d'])
    order = tuple(int(i) for i in doc['order'])
    layers = tuple(
        CouplingLayer(
            d=d,
            k=int(entry['k']),
            parity=int(entry['parity']),
            scale=_decode_conditioner(entry['scale']),
            shift=_decode_conditioner(entry['shift']),
            scale_clamp=float(entry['scale_clamp']),
            index=i,
            order=order,
        )
        for i, entry in enumerate(doc['layers'])
    )
    if len(layers) != int(doc['n_layers']):
        raise CorruptModelError("layer count does not match n_layers")
    return CouplingFlow(
        d=d,
        layers=layers,
        eps_u=float(doc['eps_u']),
        sigma_max=float(doc['sigma_max']),
        logit=bool(doc['logit']),
    )


def _encode_marginal(m):
    return {
        'name': m.name,
        'a': m.a,
        'b': m.b,
        'alpha': m.alpha,
        'beta': m.beta,
        'left_tail': m.left_tail.as_dict(),
        'right_tail': m.right_tail.as_dict(),
        'kde': {'points': encode_array(m.center.points), 'bandwidth': m.center.bandwidth},
        'center_cdf_at_alpha': m.center_cdf_at_alpha,
        'center_cdf_at_beta': m.center_cdf_at_beta,
    }


def _decode_marginal(doc):
    return MarginalModel(
        a=float(doc['a']),
        b=float(doc['b']),
        alpha=float(doc['alpha']),
        beta=float(doc['beta']),
        left_tail=GPDist(**{k: float(v) for k, v in doc['left_tail'].items()}),
        right_tail=GPDist(**{k: float(v) for k, v in doc['right_tail'].items()}),
        center=Kde1D(decode_array(doc['kde']['points']), float(doc['kde']['bandwidth'])),
        center_cdf_at_alpha=float(doc['center_cdf_at_alpha']),
        center_cdf_at_beta=float(doc['center_cdf_at_beta']),
        name=str(doc.get('name', '')),
    )


def model_to_payload(model):
    standardization = None
    if model.standardization is not None:
        mean, std = model.standardization
        standardization = {'mean': encode_array(mean), 'std': encode_array(std)}
    return {
        'mode': model.mode,
        'd': model.d,
        'columns': list(model.columns),
        'metadata': model.metadata,
        'marginals': None if model.marginals is None else [_encode_marginal(m) for m in model.marginals],
        'standardization': standardization,
        'flow': _encode_flow(model.flow),
    }


def model_from_payload(payload):
    standardization = payload['standardization']
    if standardization is not None:
        standardization = (decode_array(standardization['mean']), decode_array(standardization['std']))
    marginals = payload['marginals']
    if marginals is not None:
        marginals = tuple(_decode_marginal(m) for m in marginals)
    return CometModel(
        d=int(payload['d']),
        mode=payload['mode'],
        flow=_decode_flow(payload['flow']),
        marginals=marginals,
        standardization=standardization,
        columns=tuple(payload['columns']),
        metadata=dict(payload.get('metadata') or {}),
    )


def payload_checksum(payload):
    canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


# ============================================
# FILES
# ============================================

def save_model(model, path):
    """Write the model document; returns the checksum."""
    payload = model_to_payload(model)
    checksum = payload_checksum(payload)
    document = {'version': MODEL_VERSION, 'checksum': checksum, 'payload': payload}
    Path(path).write_text(json.dumps(document, indent=1, sort_keys=True) + '\n', encoding='utf-8')
    logger.info(f"[MODEL SAVED] {path} mode={model.mode} d={model.d} checksum={checksum[:12]}")
    return checksum


def load_model(path):
    """
    Read a model document written by save_model.

    Raises FileNotFoundError for a missing file, ModelVersionError for an
    unsupported version tag and CorruptModelError for everything else that
    does not read back cleanly (undecodable bytes, bad JSON, missing fields
    or a checksum mismatch).
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModelError(f"{path}: not a model document ({exc})") from exc
    if not isinstance(document, dict) or 'payload' not in document or 'checksum' not in document:
        raise CorruptModelError(f"{path}: missing version, checksum or payload")
    version = document.get('version')
    if version != MODEL_VERSION:
        raise ModelVersionError(f"{path}: unsupported model version '{version}', expected '{MODEL_VERSION}'")

    payload = document['payload']
    if payload_checksum(payload) != document['checksum']:
        raise CorruptModelError(f"{path}: checksum mismatch")
    try:
        model = model_from_payload(payload)
    except (KeyError, TypeError, ValueError, AttributeError, CometError) as exc:
        raise CorruptModelError(f"{path}: malformed model payload ({exc})") from exc

    logger.info(
        f"[MODEL LOADED] {path} mode={model.mode} d={model.d} "
        f"{'marginals=' + str(len(model.marginals)) if model.mode == MODE_COMET else 'standardized'}"
    )
    return model
