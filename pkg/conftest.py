import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'UavCoalitionSim.settings')
django.setup()
