# services package
# Numerical work: autodiff, networks, training, simulators, metrics and the evidence oracle
