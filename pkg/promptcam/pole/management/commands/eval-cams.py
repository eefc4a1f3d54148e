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
Dump the CAMs and pseudo-masks of a checkpoint and score them.
"""

import os

from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

from pole.config import RunConfig, add_config_arguments, config_from_options
from pole.evaluation import eval_cams
from pole.management.base import PoleCommand
from pole.training import load_checkpoint


class Command(PoleCommand):
    help = 'Evaluate the CAMs of a checkpoint against the reference masks'

    def add_arguments(self, parser):
        add_config_arguments(parser)
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--output', help='Directory for cams/, masks/ and report.json '
                                             '(default: <run>/eval_<epoch>)')

    def run(self, **options):
        checkpoint = options['checkpoint']
        if not os.path.exists(checkpoint):
            raise ImproperlyConfigured('Checkpoint %s does not exist' % checkpoint)
        state = load_checkpoint(checkpoint)
        config = None
        overrides = {k: options[k] for k in settings.POLE_DEFAULTS if k in options}
        if options.get('config'):
            config = config_from_options(options)
        elif overrides:
            config = RunConfig(state['config'], check_paths=False).replace(**overrides)
        output = options.get('output')
        if not output:
            run_dir = os.path.dirname(os.path.dirname(os.path.abspath(checkpoint)))
            output = os.path.join(run_dir, 'eval_%03d' % state['epoch'])
        report = eval_cams(checkpoint, output, config)
        if report is None:
            self.stderr.write('Reference masks missing, dumps written to %s without a report' % output)
            return
        for k, iou in enumerate(report.per_class_iou):
            self.stdout.write('%3d %s' % (k, '-' if iou is None else '%.4f' % iou))
        self.stdout.write(self.style.SUCCESS('mIoU %.4f, report in %s' % (report.miou, output)))
