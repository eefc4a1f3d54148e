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
Write a synthetic dataset of coloured disks.
"""

from django.core.exceptions import ImproperlyConfigured

from pole.management.base import PoleCommand
from pole.toy_data import make_toy_dataset, toy_class_names, write_toy_dataset


class Command(PoleCommand):
    help = 'Generate a seeded toy segmentation dataset'

    def add_arguments(self, parser):
        parser.add_argument('--n', type=int, default=64, help='Number of images')
        parser.add_argument('--classes', type=int, default=3, help='Number of classes')
        parser.add_argument('--size', type=int, default=64, help='Image width and height')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--output', default='runs/toy/data', help='Dataset directory')

    def run(self, **options):
        names = toy_class_names(options['classes'])
        try:
            dataset = make_toy_dataset(options['n'], options['classes'], options['size'], options['seed'], names)
        except ValueError as e:
            raise ImproperlyConfigured(str(e))
        write_toy_dataset(dataset, names, options['output'])
        self.stdout.write(self.style.SUCCESS('Wrote %d images of %s to %s'
                                             % (len(dataset), ', '.join(names), options['output'])))
