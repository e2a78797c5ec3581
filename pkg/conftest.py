import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'habitat_site.settings')
django.setup()
