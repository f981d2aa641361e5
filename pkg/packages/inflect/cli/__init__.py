from .commands import build_parser, console_main, main
