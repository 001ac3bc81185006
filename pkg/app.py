import logging
import os

import click

from commands import register_commands
from configs.config import config

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def create_app(config_name='development'):
    """Application factory function"""
    app_config = config.get(config_name, config['default'])()

    # Logging goes to stderr; output files never carry log text
    logging.basicConfig(level=app_config.LOG_LEVEL, format=LOG_FORMAT)

    @click.group(help='Numerical checks of posterior concentration under misspecification')
    @click.pass_context
    def cli(ctx):
        ctx.ensure_object(dict)
        ctx.obj['config'] = app_config

    # Register commands
    register_commands(cli)

    return cli


if __name__ == '__main__':
    cli = create_app(os.getenv('MISSPEC_ENV', 'development').lower())
    cli()
