"""
URL configuration for promptcam.

The only pages are the admin ones, used to browse the ingested synonym pools.
"""

from django.contrib import admin
from django.urls import path

admin.autodiscover()

urlpatterns = [
    path('admin/', admin.site.urls),
]
