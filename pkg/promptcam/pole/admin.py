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

from django.contrib import admin

from pole.models import Category, Synonym


class SynonymInline(admin.TabularInline):
    model = Synonym
    ordering = ['rank']

    def get_extra(self, request, obj=None, **kwargs):
        if obj is not None:
            return 0
        # The shipped tables have three synonyms per class
        return 3


class CategoryAdmin(admin.ModelAdmin):
    """Include Synonym as part of Category"""
    inlines = [SynonymInline]
    list_display = ('class_index', 'name', 'corpus')
    list_filter = ('corpus',)


admin.site.register(Category, CategoryAdmin)
