"""Secret key generation from reciprocal LoRa RSSI measurements.

The package is organised around the four protocol stages:

* channel probing (:mod:`lorakey.channel`, :mod:`lorakey.core`)
* differential quantization (:mod:`lorakey.quantizer`)
* secure-sketch reconciliation over BCH codes (:mod:`lorakey.bch`,
  :mod:`lorakey.sketch`)
* hash based privacy amplification (:mod:`lorakey.sketch`)

plus evaluation helpers in :mod:`lorakey.metrics` and :mod:`lorakey.nist`.
"""

__version__ = "0.1.0"
