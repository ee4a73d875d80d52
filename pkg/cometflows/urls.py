from django.conf import settings
from django.contrib import admin
from django.urls import path

admin.site.site_header = settings.ADMIN_SITE_HEADER
admin.site.site_title = settings.ADMIN_SITE_TITLE
admin.site.index_title = settings.ADMIN_INDEX_TITLE

urlpatterns = [
    # Run registry browser
    path('admin/', admin.site.urls),
]
