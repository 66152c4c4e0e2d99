# Numerical building blocks and file io
