__author__ = 'willmcginnis'
