"""
Command Server
Registers every command category and dispatches validated calls
"""
import logging
from typing import Dict, List, Optional, Tuple

import click
import jsonschema

from commands.analysis import analysis_commands
from commands.context import RunContext
from commands.experiments import experiment_commands
from configs.config import get_active_config
from configs.scenario import RunConfig, load_scenario_config
from configs.status import EXIT_CODES, ContractStatus, determine_status
from misspec.errors import ConfigError
from utils.record_store import RecordStore

logger = logging.getLogger(__name__)


class CommandServer:
    """Unified command registry with all categories"""

    def __init__(self):
        self.servers = {
            'analysis': analysis_commands,
            'experiments': experiment_commands
        }
        self.commands = self._collect_commands()

    def _collect_commands(self) -> List[Dict]:
        """Collect all commands from registered categories"""
        all_commands = []
        for server_name, server in self.servers.items():
            for command in server.commands:
                all_commands.append({**command, 'server': server_name})
        return all_commands

    def find_command(self, name: str) -> Optional[Tuple[str, Dict]]:
        for command in self.commands:
            if command['name'] == name:
                return command['server'], command
        return None

    def get_commands_list(self) -> List[Dict]:
        return self.commands

    def call_command(self, name: str, arguments: Dict) -> Dict:
        """Validate arguments, load the scenario config and route to the owning category"""
        found = self.find_command(name)
        if found is None:
            return {'error': f'Command {name} not found in any server',
                    'exit_code': EXIT_CODES[ContractStatus.ERROR]}
        server_name, command = found

        try:
            jsonschema.validate(arguments, command['input_schema'])
        except jsonschema.ValidationError as e:
            logger.error(f"❌ {name}: invalid arguments: {e.message}")
            return {'error': f'invalid arguments: {e.message}',
                    'exit_code': EXIT_CODES[ContractStatus.ERROR]}

        run = RunConfig(command=name, scenario_path=arguments.get('scenario'),
                        out_dir=arguments['out'], master_seed=arguments['seed'],
                        overrides=arguments.get('set', []))
        store = RecordStore(run.out_dir)
        try:
            cfg = load_scenario_config(run.scenario_path, run.overrides)
        except ConfigError as e:
            logger.error(f"❌ {name}: {e}")
            store.add_failure(name, str(e), status=ContractStatus.ERROR)
            store.write_failures()
            return {'error': str(e), 'valid_keys': e.valid_keys,
                    'exit_code': EXIT_CODES[ContractStatus.ERROR]}

        logger.info(f"📤 {name}: scenario={run.scenario_path} seed={run.master_seed} "
                    f"out={run.out_dir}")
        outcome = self.servers[server_name].call_command(name, RunContext(cfg, store, run.master_seed))
        if 'error' in outcome:
            logger.error(f"❌ {name}: {outcome['error']}")
            contracts = [{'name': name, 'status': ContractStatus.ERROR, 'detail': outcome['error']}]
        else:
            contracts = outcome['contracts']

        for result in contracts:
            if result['status'] in (ContractStatus.FAILED, ContractStatus.ERROR):
                store.add_failure(result['name'], result['detail'], status=result['status'])
        store.write_failures()

        status, exit_code = determine_status(contracts)
        marker = '✅' if status == ContractStatus.PASSED else '❌'
        logger.info(f"{marker} {name}: {status} ({len(contracts)} contracts)")
        response = {'command': name, 'status': status, 'exit_code': exit_code,
                    'contracts': contracts, 'files': list(store.written)}
        if 'error' in outcome:
            response['error'] = outcome['error']
        return response


def _click_command(server: CommandServer, command: Dict) -> click.Command:
    """Wrap one registry entry as a click subcommand"""

    @click.command(name=command['name'], help=command['description'])
    @click.option('--scenario', type=click.Path(dir_okay=False), default=None,
                  help='INI scenario file')
    @click.option('--out', default=None, help='Output directory')
    @click.option('--seed', type=int, default=None, help='Master seed (u64)')
    @click.option('--set', 'overrides', multiple=True, metavar='KEY=VALUE',
                  help='Override one scenario key; repeatable')
    @click.pass_context
    def run(ctx, scenario, out, seed, overrides):
        app_config = (ctx.obj or {}).get('config') or get_active_config()
        arguments = {'scenario': scenario, 'out': out or app_config.OUT_DIR,
                     'seed': app_config.MASTER_SEED if seed is None else seed,
                     'set': list(overrides)}
        result = server.call_command(command['name'], arguments)
        if 'contracts' not in result:
            click.echo(f"error: {result['error']}", err=True)
            ctx.exit(result['exit_code'])
        for contract in result['contracts']:
            click.echo(f"{contract['status']:<8} {contract['name']}: {contract['detail']}")
        click.echo(f"{result['status']}: {len(result['files'])} files written to {arguments['out']}")
        ctx.exit(result['exit_code'])

    return run


def register_commands(cli: click.Group, server: Optional[CommandServer] = None) -> None:
    """Attach every registered command to the click group"""
    server = server or command_server
    for command in server.get_commands_list():
        cli.add_command(_click_command(server, command))


# Global command server instance
command_server = CommandServer()
