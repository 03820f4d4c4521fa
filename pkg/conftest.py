import os

import django


os.environ.setdefault("DJANGO_ENV", "local")
os.environ.setdefault("DJANGO_SETTINGS_MODULE", "fmdp_lab.settings.local")
django.setup()
