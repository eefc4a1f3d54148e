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
Write the class-name selection of every image of a dataset.
"""

import os

from pole.config import add_config_arguments, config_from_options
from pole.evaluation import select_from_checkpoint
from pole.management.base import PoleCommand
from pole.training import SELECTION_FILE


class Command(PoleCommand):
    help = 'Select a class name for every present class of every image'

    def add_arguments(self, parser):
        add_config_arguments(parser)
        parser.add_argument('--checkpoint', help='Network to take the activation maps from '
                                                 '(default: a freshly initialised one)')
        parser.add_argument('--output', help='Selection file (default: <output_dir>/%s)' % SELECTION_FILE)

    def run(self, **options):
        config = config_from_options(options)
        path = options.get('output') or os.path.join(config.output_dir, SELECTION_FILE)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        records = select_from_checkpoint(config, path, options.get('checkpoint'))
        chosen = sum(1 for r in records if r.chosen_index == 0)
        self.stdout.write(self.style.SUCCESS('Wrote %d selections to %s (%d chose the ground truth)'
                                             % (len(records), path, chosen)))
