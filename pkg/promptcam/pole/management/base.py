# Prompt-driven CAM toolkit
# Copyright (C) 2023 The promptcam developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.


"""
Shared behaviour of the pole management commands.
"""

import logging

from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError

from pole.prompts import PoolIngestError
from pole.training import NumericFailure

CONFIG_ERROR = 2
NUMERIC_FAILURE = 3

VERBOSITY_LEVELS = {0: logging.WARNING, 1: logging.INFO, 2: logging.DEBUG, 3: logging.DEBUG}


class PoleCommand(BaseCommand):
    """
    Subclasses implement run(**options) instead of handle().
    Configuration problems exit with status 2, a non-finite loss with 3.
    """
    def handle(self, *args, **options):
        logging.getLogger('pole').setLevel(VERBOSITY_LEVELS.get(options.get('verbosity', 1), logging.INFO))
        try:
            return self.run(**options)
        except (ImproperlyConfigured, PoolIngestError, FileNotFoundError) as e:
            raise CommandError(str(e), returncode=CONFIG_ERROR)
        except NumericFailure as e:
            raise CommandError(str(e), returncode=NUMERIC_FAILURE)

    def run(self, **options):
        raise NotImplementedError('subclasses of PoleCommand must provide a run() method')
