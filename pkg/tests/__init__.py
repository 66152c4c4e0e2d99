# sdeoperator test suite
