# Background spectra modeling project configuration
