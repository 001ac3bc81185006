# Commands module
from commands.server import CommandServer, command_server, register_commands
