"""
Experiment Commands
Posterior rate experiments and the full contract suite
"""
import logging
from typing import Dict, List, Optional

from commands.context import RUN_ARGUMENTS, RunContext
from configs.status import contract_result
from misspec.errors import MisspecError
from misspec.scenarios import build_scenario
from services.experiments import ExperimentService, boundary_stability, rate_contracts
from services.verification import VerificationSuite
from utils.seeding import derive_seed

logger = logging.getLogger(__name__)


class ExperimentCommands:
    """Commands that run seeded Monte Carlo experiments"""

    def __init__(self, service: Optional[ExperimentService] = None):
        self.service = service
        self.commands = self._define_commands()

    def _define_commands(self) -> List[Dict]:
        return [
            {
                'name': 'rate',
                'description': 'Posterior replications over the sample-size ladder of a scenario '
                               'and the fitted concentration rate',
                'input_schema': RUN_ARGUMENTS
            },
            {
                'name': 'verify',
                'description': 'Run every property contract and list the failures',
                'input_schema': RUN_ARGUMENTS
            },
        ]

    def call_command(self, name: str, context: RunContext) -> Dict:
        """Execute a command"""
        method_map = {
            'rate': lambda: self._handle_rate(context),
            'verify': lambda: self._handle_verify(context),
        }

        if name not in method_map:
            return {'error': f'Command {name} not found'}

        try:
            return {'contracts': method_map[name]()}
        except MisspecError as e:
            return {'error': f"{type(e).__name__}: {e}"}

    def _handle_rate(self, context: RunContext) -> List[Dict]:
        cfg = context.config
        service = self.service or ExperimentService()
        scenario = build_scenario(cfg.scenario, **cfg.scenario_options(context.seed))
        result = service.run(scenario)
        service.write(result, context.store)
        contracts = rate_contracts(result)

        if scenario.model == 'parametric_boundary':
            medians, spread = boundary_stability(scenario.n_list,
                                                 seed=derive_seed(context.seed, 'boundary', 0))
            context.store.write_table('rate_boundary_mass.csv', ('n', 'median_mass'),
                                      medians.items())
            contracts.append(contract_result('rate_boundary_mass_stable', spread <= 3.0,
                                             f"max/min median mass {spread:.4g}"))
        return contracts

    def _handle_verify(self, context: RunContext) -> List[Dict]:
        cfg = context.config
        suite = VerificationSuite(
            context.seed, context.store, n_tuples=cfg.verify_tuples, power_reps=cfg.power_reps,
            cover_eps=cfg.cover_eps,
            evidence={'n': cfg.evidence_n, 'eps': cfg.evidence_eps, 'C': cfg.evidence_C,
                      'reps': cfg.evidence_reps},
            entropy={'M': cfg.M, 'eps_list': cfg.entropy_eps, 'n_probe': cfg.entropy_probes})
        results = suite.run()
        context.store.write_table('verify.csv', ('contract', 'status', 'detail'),
                                  ((r['name'], r['status'], r['detail']) for r in results))
        return results


# Global instance
experiment_commands = ExperimentCommands()
