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
Validate a synonym file and store its pools in the database.
"""

from django.conf import settings

from pole.management.base import PoleCommand
from pole.models import store_pools
from pole.prompts import load_pools


class Command(PoleCommand):
    help = 'Ingest a synonym table (one JSON object per class) into the database'

    def add_arguments(self, parser):
        parser.add_argument('path', nargs='?', default=settings.POLE_SYNONYM_FILE,
                            help='Synonym file (default: the shipped PASCAL VOC table)')
        parser.add_argument('--dry-run', action='store_true',
                            help='Validate the file without storing it')

    def run(self, **options):
        pools = load_pools(options['path'])
        for k in sorted(pools):
            self.stdout.write(str(pools[k]))
        if options['dry_run']:
            self.stdout.write('%d pools are valid, nothing stored' % len(pools))
            return
        count = store_pools(pools)
        self.stdout.write(self.style.SUCCESS('Stored %d pools from %s' % (count, options['path'])))
