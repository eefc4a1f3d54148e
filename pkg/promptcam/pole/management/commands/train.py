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
Train a CAM network with prompt-selected class names.
"""

import os

from pole.config import add_config_arguments, config_from_options
from pole.management.base import PoleCommand
from pole.training import train


class Command(PoleCommand):
    help = 'Train a run. Every configuration key has a matching flag (pool_size is --pool-size)'

    def add_arguments(self, parser):
        add_config_arguments(parser)
        parser.add_argument('--resume', help='Checkpoint of the same configuration to continue from')

    def run(self, **options):
        config = config_from_options(options)
        os.makedirs(config.output_dir, exist_ok=True)
        config.write(os.path.join(config.output_dir, 'config.json'))
        result = train(config, resume=options.get('resume'))
        self.stdout.write('Losses in %s, selections in %s' % (result.loss_file, result.selection_file))
        self.stdout.write(self.style.SUCCESS('Final checkpoint %s' % result.checkpoint))
