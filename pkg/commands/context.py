"""Arguments shared by every command and the context handed to handlers"""
from dataclasses import dataclass

from configs.scenario import ScenarioConfig
from utils.record_store import RecordStore

RUN_ARGUMENTS = {
    'type': 'object',
    'properties': {
        'scenario': {
            'type': ['string', 'null'],
            'description': 'Path of an INI scenario file'
        },
        'out': {
            'type': 'string',
            'minLength': 1,
            'description': 'Output directory'
        },
        'seed': {
            'type': 'integer',
            'minimum': 0,
            'maximum': 2 ** 64 - 1,
            'description': 'Master seed'
        },
        'set': {
            'type': 'array',
            'items': {'type': 'string', 'pattern': '^[^=]+=.*$'},
            'description': 'key=value overrides applied after the scenario file'
        }
    },
    'required': ['out', 'seed'],
    'additionalProperties': False
}


@dataclass(frozen=True, eq=False)
class RunContext:
    config: ScenarioConfig
    store: RecordStore
    seed: int
