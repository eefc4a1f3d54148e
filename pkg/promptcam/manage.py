#!/usr/bin/env python
"""
Command-line entry point for the prompt-driven CAM toolkit.

All of the toolkit's subcommands (ingest-synonyms, make-toy, select, train,
eval-cams, report) are Django management commands of the pole app.
"""
import os
import sys

if __name__ == "__main__":
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "promptcam.settings")
    # Reports are written to files, never shown on screen
    os.environ.setdefault("MPLBACKEND", "Agg")

    from django.core.management import execute_from_command_line

    execute_from_command_line(sys.argv)
