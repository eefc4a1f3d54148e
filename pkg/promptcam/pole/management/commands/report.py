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
Compare runs: prompt strategies, ground-truth selection frequency, pool size sweep.
"""

import json

from django.core.exceptions import ImproperlyConfigured

from pole.class_selector import read_selections
from pole.management.base import PoleCommand
from pole.pseudo_labels import EvalReport
from pole.reports import EmptyReport, UnknownClass, write_reports


class Command(PoleCommand):
    help = 'Write comparison tables and plots from selection dumps and evaluation reports'

    def add_arguments(self, parser):
        parser.add_argument('--selections', nargs='*', default=[], help='Selection files (NDJSON)')
        parser.add_argument('--evals', nargs='*', default=[], help='report.json files written by eval-cams')
        parser.add_argument('--classes', help='Comma-separated class names for the selection table')
        parser.add_argument('--output', default='runs/report')

    def run(self, **options):
        try:
            records = [r for path in options['selections'] for r in read_selections(path)]
            reports = [EvalReport.read(path) for path in options['evals']]
        except (OSError, json.JSONDecodeError, KeyError) as e:
            raise ImproperlyConfigured('Cannot read report inputs: %s' % e)
        names = options['classes'].split(',') if options.get('classes') else None
        try:
            written = write_reports(options['output'], reports, records, names)
        except (EmptyReport, UnknownClass) as e:
            raise ImproperlyConfigured(str(e))
        for path in written:
            self.stdout.write(path)
