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
Run configuration.

A run is configured by a flat JSON object whose keys are those of
settings.POLE_DEFAULTS. Values come from the defaults, then the file,
then command-line flags (--pool-size for pool_size, and so on).
"""

import argparse
import copy
import hashlib
import json
import logging
import os

from django.conf import settings
from django.core.exceptions import ImproperlyConfigured, ValidationError
from django.core.validators import MaxValueValidator, MinValueValidator
from django.utils.translation import gettext as _

from pole.adapters import GATE_MODES
from pole.cam_core import BACKBONES
from pole.clip_bridge import ENCODERS
from pole.models import pools_from_database
from pole.prompts import PromptTemplate, load_pools, pools_for_classes

logger = logging.getLogger(__name__)

DATASET_FORMATS = ('toy', 'voc')
SCHEDULES = ('cosine', 'constant')

# Keys that do not change what a run computes
UNHASHED_KEYS = ('output_dir',)


class InvalidConfig(ImproperlyConfigured):
    """A run configuration failed validation."""
    pass


def _choice_validator(choices):
    def validate(value):
        if value not in choices:
            raise ValidationError(_(u'%(value)s is not one of %(choices)s'),
                                  params={'value': value, 'choices': ', '.join(choices)})
    return validate


def validate_int(value):
    """
    Checks for an integer (bools don't count).
    """
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(_(u'%(value)s is not an integer'), params={'value': value})


def validate_number(value):
    """
    Checks for an int or float (bools don't count).
    """
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(_(u'%(value)s is not a number'), params={'value': value})


def validate_bool(value):
    if not isinstance(value, bool):
        raise ValidationError(_(u'%(value)s is not true or false'), params={'value': value})


def validate_str(value):
    if not isinstance(value, str):
        raise ValidationError(_(u'%(value)s is not a string'), params={'value': value})


def validate_open_interval(value):
    """
    Checks for a value strictly between 0 and 1.
    """
    if not 0 < value < 1:
        raise ValidationError(_(u'%(value)s is not strictly between 0 and 1'), params={'value': value})


def validate_sim_eps(value):
    if not 0 < value < 0.5:
        raise ValidationError(_(u'%(value)s is not strictly between 0 and 0.5'), params={'value': value})


def validate_positive(value):
    if value <= 0:
        raise ValidationError(_(u'%(value)s is not positive'), params={'value': value})


def validate_existing_path(value):
    if not os.path.exists(value):
        raise ValidationError(_(u'%(value)s does not exist'), params={'value': value})


_INT = [validate_int]
_POSITIVE_INT = [validate_int, MinValueValidator(1)]
_NON_NEGATIVE = [validate_number, MinValueValidator(0)]

# Validators for each key. A key with None in OPTIONAL_KEYS may be null.
VALIDATORS = {
    'dataset': [validate_str, validate_existing_path],
    'dataset_format': [_choice_validator(DATASET_FORMATS)],
    'image_set': [validate_str],
    'crop_size': [validate_int, MinValueValidator(16)],
    'hflip': [validate_bool],
    'backbone': [_choice_validator([b.name for b in BACKBONES])],
    'backbone_stride': _POSITIVE_INT,
    'backbone_channels': _POSITIVE_INT,
    'encoder': [_choice_validator([e.name for e in ENCODERS])],
    'mock_seed': _INT,
    'encoder_dim': _POSITIVE_INT,
    'pool_file': [validate_str],
    'pool_corpus': [validate_str],
    'pool_size': _POSITIVE_INT,
    'template_prefix': [validate_str],
    'template_terminator': [validate_str],
    'lr': [validate_number, validate_positive],
    'momentum': [validate_number, MinValueValidator(0), MaxValueValidator(0.999)],
    'weight_decay': _NON_NEGATIVE,
    'schedule': [_choice_validator(SCHEDULES)],
    'epochs': [validate_int, MinValueValidator(0)],
    'batch_size': _POSITIVE_INT,
    'alpha': _NON_NEGATIVE,
    'beta': _NON_NEGATIVE,
    'sim_eps': [validate_number, validate_sim_eps],
    'temperature': [validate_number, validate_positive],
    'contrastive_weight': _NON_NEGATIVE,
    'adapter_gate_mode': [_choice_validator(GATE_MODES)],
    'adapter_gate_value': [validate_number],
    'adapter_hidden': _POSITIVE_INT,
    'adapter_clamp_gate': [validate_bool],
    'freeze_selection_epoch': [validate_int, MinValueValidator(0)],
    'select_after_adapter': [validate_bool],
    'bg_threshold': [validate_number, validate_open_interval],
    'seed': _INT,
    'output_dir': [validate_str],
}

OPTIONAL_KEYS = ('crop_size', 'temperature', 'adapter_hidden', 'freeze_selection_epoch')


class RunConfig():
    """
    Validated flat run configuration. Keys read as attributes.
    """
    def __init__(self, values, check_paths=True):
        unknown = set(values) - set(settings.POLE_DEFAULTS)
        if unknown:
            raise InvalidConfig('Unknown configuration keys: %s' % ', '.join(sorted(unknown)))
        merged = copy.deepcopy(settings.POLE_DEFAULTS)
        merged.update(values)
        self._values = merged
        self.validate(check_paths)

    @classmethod
    def from_sources(cls, path=None, overrides=None, check_paths=True):
        """
        Defaults, then the JSON file at path, then the overrides dict.
        """
        values = {}
        if path:
            try:
                with open(path, encoding='utf-8') as f:
                    values = json.load(f)
            except OSError as e:
                raise InvalidConfig('Cannot read configuration %s: %s' % (path, e))
            except json.JSONDecodeError as e:
                raise InvalidConfig('%s:%d: %s' % (path, e.lineno, e.msg))
            if not isinstance(values, dict):
                raise InvalidConfig('%s does not hold a JSON object' % path)
        if overrides:
            values.update(overrides)
        return cls(values, check_paths)

    def validate(self, check_paths=True):
        errors = {}
        for key, validators in VALIDATORS.items():
            value = self._values[key]
            if value is None and key in OPTIONAL_KEYS:
                continue
            for v in validators:
                if not check_paths and v is validate_existing_path:
                    continue
                try:
                    v(value)
                except ValidationError as e:
                    errors.setdefault(key, []).extend(e.messages)
                    break
        if check_paths and self._values['pool_file']:
            try:
                validate_existing_path(self._values['pool_file'])
            except ValidationError as e:
                errors.setdefault('pool_file', []).extend(e.messages)
        if errors:
            raise InvalidConfig('; '.join('%s: %s' % (k, ' '.join(m)) for k, m in sorted(errors.items())))

    def __getattr__(self, name):
        try:
            return self.__dict__['_values'][name]
        except KeyError:
            raise AttributeError(name)

    def as_dict(self):
        return copy.deepcopy(self._values)

    def replace(self, **changes):
        """A copy with some keys changed."""
        values = self.as_dict()
        values.update(changes)
        return RunConfig(values, check_paths=False)

    def config_hash(self):
        """
        SHA-256 of the canonical JSON of every key that affects the computation.
        """
        values = {k: v for k, v in self._values.items() if k not in UNHASHED_KEYS}
        return hashlib.sha256(json.dumps(values, sort_keys=True).encode('utf-8')).hexdigest()

    def write(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self._values, f, indent=2, sort_keys=True)

    def template(self):
        return PromptTemplate(self.template_prefix, self.template_terminator)

    def pools(self, class_names):
        """
        Synonym pools for the dataset's classes, truncated to pool_size.
        Without a pool_file they come from the ingested pool_corpus.
        """
        if self.pool_file:
            pools = load_pools(self.pool_file, known_classes=None)
        else:
            pools = pools_from_database(self.pool_corpus)
            if not pools:
                raise InvalidConfig('No ingested synonyms for corpus "%s"' % self.pool_corpus)
        return pools_for_classes(pools, class_names, self.pool_size)

    def __str__(self):
        return json.dumps(self._values, sort_keys=True)


def option_name(key):
    """pool_size -> --pool-size"""
    return '--' + key.replace('_', '-')


def _flag_parser(key):
    """
    String defaults take the flag text as is, anything else is parsed as JSON
    (so --crop-size null and --hflip false work).
    """
    if isinstance(settings.POLE_DEFAULTS[key], str):
        return str

    def parse(text):
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            return text
    return parse


def add_config_arguments(parser):
    """
    Add --config plus one flag per configuration key to a command's parser.
    """
    parser.add_argument('--config', help='JSON run configuration file')
    for key in settings.POLE_DEFAULTS:
        parser.add_argument(option_name(key), dest=key, type=_flag_parser(key),
                            default=argparse.SUPPRESS,
                            help='Overrides "%s" (default %r)' % (key, settings.POLE_DEFAULTS[key]))


def config_from_options(options, check_paths=True):
    """
    RunConfig from a command's parsed options.
    """
    overrides = {k: options[k] for k in settings.POLE_DEFAULTS if k in options}
    return RunConfig.from_sources(options.get('config'), overrides, check_paths)
